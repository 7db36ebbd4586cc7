#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace cift {

/// Called at named crash points during durable writes. Test harnesses throw
/// from it to simulate a process dying at that point.
using KillPointHook = std::function<void(std::string_view point)>;

std::string sha256_hex(std::string_view bytes);

std::string read_file(const std::filesystem::path& path);

/// Write-new-then-rename. Readers see either the old or the new file, never a
/// torn one. Kill points: "<label>.begin", "<label>.partial" (half the bytes on
/// disk in the temp file), "<label>.written", "<label>.renamed".
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes,
                       const KillPointHook& hook = {}, std::string_view label = "write");

/// Number of Unicode scalar values; each invalid byte counts as one.
std::size_t utf8_length(std::string_view text);

/// Splits into code point slices; invalid bytes become single-byte slices.
std::vector<std::string_view> utf8_codepoints(std::string_view text);

bool is_space_codepoint(std::string_view cp) noexcept;

std::string trim(std::string_view text);

std::string now_iso8601();

/// mt19937_64 with platform-independent bounded draws (the standard
/// distributions are implementation-defined).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }
    /// Uniform in [0, n); n must be > 0.
    std::uint64_t below(std::uint64_t n);
    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    template <typename T>
    void shuffle(std::vector<T>& items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            std::swap(items[i - 1], items[below(i)]);
        }
    }

private:
    std::mt19937_64 engine_;
};

/// 64-bit FNV-1a, optionally seeded.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL) noexcept;

}  // namespace cift
