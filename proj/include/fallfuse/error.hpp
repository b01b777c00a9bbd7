#pragma once

#include <stdexcept>
#include <string>

namespace fallfuse {

// Error taxonomy. The CLI maps these onto its stable exit codes
// (config/parse -> 2, numeric divergence -> 3, modality mismatch -> 4).

struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct InputError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct StateError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// CSV header is missing a configured column.
struct SchemaError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Corpus resolved to nothing usable (empty index, no rows, ...).
struct CorpusError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DecodeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Non-finite loss during training; carries epoch/batch in the message.
struct DivergenceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Checkpoint requires a modality or sensor width the corpus cannot supply.
struct ModalityError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace fallfuse
