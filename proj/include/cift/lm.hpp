#pragma once

// Byte-level n-gram language model with additive smoothing, and the backend
// interface the filter scores through.

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace cift {

inline constexpr int kVocabSize = 256;

class NGramModel {
public:
    /// Sparse next-byte counts of one context, sorted by byte.
    struct ContextCounts {
        std::uint64_t total = 0;
        std::vector<std::pair<std::uint8_t, std::uint64_t>> next;

        std::uint64_t count(std::uint8_t byte) const noexcept;
        void add(std::uint8_t byte, std::uint64_t n = 1);
        friend bool operator==(const ContextCounts&, const ContextCounts&) = default;
    };

    explicit NGramModel(int order = 3, double alpha = 1.0, std::string version = {});

    int order() const noexcept { return order_; }
    double alpha() const noexcept { return alpha_; }
    const std::string& version() const noexcept { return version_; }
    void set_version(std::string v) { version_ = std::move(v); }
    std::size_t context_count() const noexcept { return counts_.size(); }

    /// Adds every (context, next byte) event of each sequence; contexts are
    /// left-padded with a BOS sentinel.
    void observe(std::string_view sequence);

    /// C(context -> byte); `context` is given as a raw history (the last
    /// order-1 bytes are used, BOS-padded on the left).
    std::uint64_t count(std::string_view history, std::uint8_t byte) const;
    std::uint64_t context_total(std::string_view history) const;

    /// Smoothed conditional probability of `byte` after `history`.
    double probability(std::string_view history, std::uint8_t byte) const;

    /// ln P of each target byte given prefix ⧺ target[..k]. Only target bytes
    /// are scored. Throws on empty target.
    std::vector<double> token_logprobs(std::string_view prefix, std::string_view target) const;

    /// Full smoothed next-byte distribution after `history`.
    std::vector<double> distribution(std::string_view history) const;

    friend bool operator==(const NGramModel&, const NGramModel&) = default;

private:
    friend std::string serialize(const NGramModel&);
    friend NGramModel deserialize(std::string_view);

    /// Key = one byte holding the BOS pad count, then the real context bytes.
    std::string context_key(std::string_view history) const;
    const ContextCounts* find(std::string_view history) const;

    int order_;
    double alpha_;
    std::string version_;
    std::unordered_map<std::string, ContextCounts> counts_;
};

/// Returns a new model with every sequence observed; the input is unchanged.
NGramModel train(NGramModel model, std::span<const std::string> sequences);

/// exp(-mean(token_logprobs)). prefix="" gives the unconditional PPL(y).
double perplexity(const NGramModel& model, std::string_view prefix, std::string_view target);

struct SamplingOptions {
    std::size_t max_tokens = 64;
    double temperature = 1.0;
    /// Argmax each step (ties to the lowest byte); temperature is ignored.
    bool greedy = false;
    std::uint64_t seed = 0;
    std::optional<std::uint8_t> stop_byte;
};

/// Deterministic for fixed arguments. The stop byte ends generation and is not
/// included in the output.
std::string sample(const NGramModel& model, std::string_view prompt, const SamplingOptions& options);

/// Versioned little-endian binary format with a trailing checksum.
std::string serialize(const NGramModel& model);
/// Throws Error(corrupt) on any truncation, checksum or format mismatch.
NGramModel deserialize(std::string_view bytes);

/// What the filter needs from a language model. Implementations must return
/// finite, non-positive log-probabilities, one per target byte.
class LMBackend {
public:
    virtual ~LMBackend() = default;

    virtual std::vector<double> token_logprobs(std::string_view prefix, std::string_view target) const = 0;
    virtual std::string version() const = 0;

    virtual void train(std::span<const std::string> sequences) = 0;
    virtual std::string snapshot() const = 0;
    virtual void restore(std::string_view bytes) = 0;
};

double perplexity(const LMBackend& backend, std::string_view prefix, std::string_view target);

/// In-process backend over an immutable model snapshot; train() replaces the
/// snapshot with a new value so concurrent readers keep the old one.
class NGramBackend final : public LMBackend {
public:
    explicit NGramBackend(NGramModel model);
    explicit NGramBackend(std::shared_ptr<const NGramModel> model);

    std::vector<double> token_logprobs(std::string_view prefix, std::string_view target) const override;
    std::string version() const override;
    void train(std::span<const std::string> sequences) override;
    std::string snapshot() const override;
    void restore(std::string_view bytes) override;

    std::shared_ptr<const NGramModel> model() const { return model_; }

private:
    std::shared_ptr<const NGramModel> model_;
};

/// Client for a remote scorer speaking POST /v1/logprobs
/// {"prefix","target"} -> {"logprobs":[...],"model_version"}.
class HttpLMBackend final : public LMBackend {
public:
    /// base_url like "http://127.0.0.1:8081".
    explicit HttpLMBackend(std::string base_url, double timeout_seconds = 30.0);

    std::vector<double> token_logprobs(std::string_view prefix, std::string_view target) const override;
    std::string version() const override;
    void train(std::span<const std::string> sequences) override;
    std::string snapshot() const override;
    void restore(std::string_view bytes) override;

private:
    std::string base_url_;
    double timeout_seconds_;
    mutable std::string last_version_;
};

}  // namespace cift
