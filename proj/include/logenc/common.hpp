#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace logenc {

/// Error thrown by all modules. `code()` is a stable machine-readable tag
/// (e.g. "EmptyRecord", "BadBanding") that the CLI maps to exit codes and
/// tests assert on.
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& message)
        : std::runtime_error(code + ": " + message), code_(std::move(code)) {}

    const std::string& code() const { return code_; }

private:
    std::string code_;
};

// 64-bit FNV-1a. Used for content hashing (dedup keys, artifact hashes)
// and as the base hash of MinHash shingles. Not cryptographic.
inline uint64_t fnv1a64(std::string_view data, uint64_t seed = 0xcbf29ce484222325ULL) {
    uint64_t h = seed;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// SplitMix64 finalizer; good avalanche for combining hashes/seeds.
inline uint64_t mix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline bool is_ascii_space(char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

/// Split on whitespace runs, dropping the whitespace. "a  b" -> {"a","b"}.
std::vector<std::string> split_whitespace(std::string_view text);

/// Run fn(i) for i in [0, n) over up to `threads` workers. Results must be
/// written to pre-sized slots indexed by i so the output is identical for
/// any thread count. threads <= 1 runs inline.
void parallel_for(size_t n, int threads, const std::function<void(size_t)>& fn);

}  // namespace logenc
