#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "fallfuse/dataset.hpp"
#include "fallfuse/model.hpp"

namespace fallfuse {

// Flat key = value run configuration. Lines are `key = value`; `#` starts
// a comment; keys are dotted (synth.count, train.lr, ...). Documented keys
// are listed in the README.
class Config {
public:
    static Config parse_file(const std::string& path);
    static Config parse_string(const std::string& text, const std::string& origin);

    bool has(const std::string& key) const;

    std::string get(const std::string& key) const;  // ConfigError when absent
    std::string get(const std::string& key, const std::string& fallback) const;
    int get_int(const std::string& key, int fallback) const;
    double get_double(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
    std::vector<std::string> get_list(const std::string& key) const;  // comma-separated
    std::set<int> get_int_set(const std::string& key) const;

    const std::map<std::string, std::string>& entries() const { return entries_; }

private:
    std::map<std::string, std::string> entries_;
    std::string origin_;
};

// Builders from the documented key groups.
SynthConfig synth_from_config(const Config& cfg);
SplitSpec split_from_config(const Config& cfg);
TrainConfig train_from_config(const Config& cfg);
ModelProfile profile_from_config(const Config& cfg);
CorpusLayout layout_from_config(const Config& cfg);

}  // namespace fallfuse
