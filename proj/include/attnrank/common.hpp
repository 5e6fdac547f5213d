#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace attnrank {

// Error taxonomy. Usage/contract violations are ArgumentError (or the more
// specific subtypes); anything that can only be detected at runtime against
// external state (files, wire input) is RuntimeError.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct ArgumentError : Error {
    explicit ArgumentError(const std::string& msg) : Error(msg) {}
};

// Sequence exceeds a configured length bound.
struct LengthError : Error {
    explicit LengthError(const std::string& msg) : Error(msg) {}
};

// Malformed persisted data (JSONL line, checkpoint, head-set file).
struct ParseError : Error {
    explicit ParseError(const std::string& msg) : Error(msg) {}
};

// An attention capture is missing rows or heads the caller requires.
struct CaptureError : Error {
    explicit CaptureError(const std::string& msg) : Error(msg) {}
};

struct GenerationError : Error {
    explicit GenerationError(const std::string& msg) : Error(msg) {}
};

using Rng = std::mt19937_64;

// Derive an independent stream from a base seed. Streams for distinct
// indices never share state, so per-query generation can run in any order.
inline Rng derive_rng(uint64_t base_seed, uint64_t stream) {
    std::seed_seq seq{base_seed, uint64_t(0x9e3779b97f4a7c15ull) ^ stream, stream};
    return Rng(seq);
}

}  // namespace attnrank
