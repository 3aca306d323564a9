#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace lsr {

enum class ErrorCode {
    Argument,
    Dimension,
    Format,
    Io,
    Numeric,
    State,
    Internal,
};

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(message), code_(code) {}
    ErrorCode code() const { return code_; }

private:
    ErrorCode code_;
};

inline const char* error_code_name(ErrorCode c) {
    switch (c) {
        case ErrorCode::Argument: return "argument";
        case ErrorCode::Dimension: return "dimension";
        case ErrorCode::Format: return "format";
        case ErrorCode::Io: return "io";
        case ErrorCode::Numeric: return "numeric";
        case ErrorCode::State: return "state";
        case ErrorCode::Internal: return "internal";
    }
    return "unknown";
}

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

inline std::string shape_to_string(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    out += "]";
    return out;
}

// Stateless 64-bit mixer. Used to derive independent per-iteration RNG
// streams from (seed, counter) so training can resume mid-run bit-exactly.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream) {
    return std::mt19937_64(mix64(seed ^ mix64(stream)));
}

}  // namespace lsr
