#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fallfuse/config.hpp"

namespace fallfuse {

// Subcommand bodies behind the fallfuse CLI. They throw the library error
// types; the binary maps those onto exit codes 2 (config/parse),
// 3 (divergence) and 4 (modality mismatch).

// Writes a FALLFUSE-DATA-1 cache from synth.* keys and prints a summary.
// Returns the cache path.
std::string cmd_synth(const Config& cfg, const std::string& out_dir,
                      std::optional<std::uint64_t> seed_override);

// Trains every selected variant; writes <variant>.ckpt and
// <variant>_epochs.csv under out_dir. Returns the variant names trained.
std::vector<std::string> cmd_train(const Config& cfg, const std::string& out_dir,
                                   std::optional<std::uint64_t> seed_override);

// Evaluates checkpoints on the test split; writes metrics.csv rows
// (variant,split,averaging,accuracy,precision,recall,f1). Returns the
// metrics CSV path.
std::string cmd_eval(const Config& cfg, const std::string& out_dir,
                     std::optional<std::uint64_t> seed_override);

// Merges epoch CSVs into one long-format (variant,epoch,metric,value)
// file sorted by variant then epoch. Returns the curves CSV path.
std::string cmd_curves(const Config& cfg, const std::string& out_dir);

// Shared corpus resolution: corpus.source = synth | cache | real.
std::vector<FusedExample> resolve_corpus(const Config& cfg,
                                         std::optional<std::uint64_t> seed_override);

// Formats a double with the shortest representation that parses back
// exactly; used by every CSV writer so identical runs emit identical bytes.
std::string format_double(double v);

}  // namespace fallfuse
