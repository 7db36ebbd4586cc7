#include "cift/lm.hpp"

#include "cift/error.hpp"
#include "cift/util.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <map>

namespace cift {

std::uint64_t NGramModel::ContextCounts::count(std::uint8_t byte) const noexcept {
    auto it = std::lower_bound(next.begin(), next.end(), byte,
                               [](const auto& e, std::uint8_t b) { return e.first < b; });
    return (it != next.end() && it->first == byte) ? it->second : 0;
}

void NGramModel::ContextCounts::add(std::uint8_t byte, std::uint64_t n) {
    auto it = std::lower_bound(next.begin(), next.end(), byte,
                               [](const auto& e, std::uint8_t b) { return e.first < b; });
    if (it != next.end() && it->first == byte) {
        it->second += n;
    } else {
        next.insert(it, {byte, n});
    }
    total += n;
}

NGramModel::NGramModel(int order, double alpha, std::string version)
    : order_(order), alpha_(alpha), version_(std::move(version)) {
    if (order < 1 || order > 64) throw Error(ErrorCode::invalid_input, "n-gram order must be in [1, 64]");
    if (!(alpha > 0.0) || !std::isfinite(alpha)) {
        throw Error(ErrorCode::invalid_input, "smoothing alpha must be finite and > 0");
    }
}

std::string NGramModel::context_key(std::string_view history) const {
    const std::size_t len = static_cast<std::size_t>(order_ - 1);
    const std::size_t real = std::min(len, history.size());
    std::string key;
    key.reserve(1 + real);
    key.push_back(static_cast<char>(len - real));
    key.append(history.substr(history.size() - real));
    return key;
}

const NGramModel::ContextCounts* NGramModel::find(std::string_view history) const {
    auto it = counts_.find(context_key(history));
    return it == counts_.end() ? nullptr : &it->second;
}

void NGramModel::observe(std::string_view sequence) {
    for (std::size_t k = 0; k < sequence.size(); ++k) {
        counts_[context_key(sequence.substr(0, k))].add(static_cast<std::uint8_t>(sequence[k]));
    }
}

std::uint64_t NGramModel::count(std::string_view history, std::uint8_t byte) const {
    const auto* c = find(history);
    return c ? c->count(byte) : 0;
}

std::uint64_t NGramModel::context_total(std::string_view history) const {
    const auto* c = find(history);
    return c ? c->total : 0;
}

double NGramModel::probability(std::string_view history, std::uint8_t byte) const {
    const auto* c = find(history);
    const double num = static_cast<double>(c ? c->count(byte) : 0) + alpha_;
    const double den = static_cast<double>(c ? c->total : 0) + alpha_ * kVocabSize;
    return num / den;
}

std::vector<double> NGramModel::token_logprobs(std::string_view prefix, std::string_view target) const {
    if (target.empty()) throw Error(ErrorCode::invalid_input, "perplexity is undefined for an empty target");
    std::string joined;
    joined.reserve(prefix.size() + target.size());
    joined.append(prefix).append(target);
    const std::string_view all(joined);
    std::vector<double> out;
    out.reserve(target.size());
    for (std::size_t k = 0; k < target.size(); ++k) {
        const std::size_t pos = prefix.size() + k;
        out.push_back(std::log(probability(all.substr(0, pos), static_cast<std::uint8_t>(all[pos]))));
    }
    return out;
}

std::vector<double> NGramModel::distribution(std::string_view history) const {
    const auto* c = find(history);
    const double den = static_cast<double>(c ? c->total : 0) + alpha_ * kVocabSize;
    std::vector<double> p(kVocabSize, alpha_ / den);
    if (c) {
        for (auto [b, n] : c->next) p[b] = (static_cast<double>(n) + alpha_) / den;
    }
    return p;
}

NGramModel train(NGramModel model, std::span<const std::string> sequences) {
    for (const auto& s : sequences) model.observe(s);
    return model;
}

namespace {

double perplexity_of(const std::vector<double>& logprobs) {
    double sum = 0.0;
    for (double lp : logprobs) sum += lp;
    return std::exp(-sum / static_cast<double>(logprobs.size()));
}

}  // namespace

double perplexity(const NGramModel& model, std::string_view prefix, std::string_view target) {
    return perplexity_of(model.token_logprobs(prefix, target));
}

double perplexity(const LMBackend& backend, std::string_view prefix, std::string_view target) {
    if (target.empty()) throw Error(ErrorCode::invalid_input, "perplexity is undefined for an empty target");
    auto lps = backend.token_logprobs(prefix, target);
    if (lps.size() != target.size()) {
        throw Error(ErrorCode::backend, "backend returned " + std::to_string(lps.size()) +
                                            " logprobs for a " + std::to_string(target.size()) + "-byte target");
    }
    return perplexity_of(lps);
}

std::string sample(const NGramModel& model, std::string_view prompt, const SamplingOptions& options) {
    if (!options.greedy && !(options.temperature > 0.0)) {
        throw Error(ErrorCode::invalid_input, "temperature must be > 0 unless greedy decoding is requested");
    }
    Rng rng(options.seed);
    std::string history(prompt);
    std::string out;
    out.reserve(options.max_tokens);
    for (std::size_t step = 0; step < options.max_tokens; ++step) {
        auto p = model.distribution(history);
        int chosen = 0;
        if (options.greedy) {
            for (int b = 1; b < kVocabSize; ++b) {
                if (p[b] > p[chosen]) chosen = b;
            }
        } else {
            // p^(1/T), computed in log space then normalized.
            std::vector<double> w(kVocabSize);
            double max_log = -INFINITY;
            for (int b = 0; b < kVocabSize; ++b) {
                w[b] = std::log(p[b]) / options.temperature;
                max_log = std::max(max_log, w[b]);
            }
            double z = 0.0;
            for (auto& x : w) {
                x = std::exp(x - max_log);
                z += x;
            }
            double u = rng.uniform() * z;
            chosen = kVocabSize - 1;
            for (int b = 0; b < kVocabSize; ++b) {
                u -= w[b];
                if (u < 0.0) {
                    chosen = b;
                    break;
                }
            }
        }
        const auto byte = static_cast<std::uint8_t>(chosen);
        if (options.stop_byte && byte == *options.stop_byte) break;
        out.push_back(static_cast<char>(byte));
        history.push_back(static_cast<char>(byte));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

constexpr char kMagic[8] = {'C', 'I', 'F', 'T', 'N', 'G', 'R', 'M'};
constexpr std::uint32_t kFormatVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class Reader {
public:
    explicit Reader(std::string_view bytes) : bytes_(bytes) {}

    std::string_view take(std::size_t n) {
        if (bytes_.size() - pos_ < n) throw Error(ErrorCode::corrupt, "n-gram artifact truncated");
        auto s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    std::uint8_t u8() { return static_cast<std::uint8_t>(take(1)[0]); }
    std::uint32_t u32() {
        auto s = take(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(s[i])) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        auto s = take(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(s[i])) << (8 * i);
        return v;
    }
    bool done() const { return pos_ == bytes_.size(); }

private:
    std::string_view bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

std::string serialize(const NGramModel& model) {
    std::string out(kMagic, sizeof kMagic);
    put_u32(out, kFormatVersion);
    put_u32(out, static_cast<std::uint32_t>(model.order_));
    put_u64(out, std::bit_cast<std::uint64_t>(model.alpha_));
    put_u32(out, static_cast<std::uint32_t>(model.version_.size()));
    out += model.version_;

    std::vector<const std::pair<const std::string, NGramModel::ContextCounts>*> entries;
    entries.reserve(model.counts_.size());
    for (const auto& e : model.counts_) entries.push_back(&e);
    std::sort(entries.begin(), entries.end(), [](auto* a, auto* b) { return a->first < b->first; });

    put_u64(out, entries.size());
    for (const auto* e : entries) {
        put_u32(out, static_cast<std::uint32_t>(e->first.size()));
        out += e->first;
        put_u64(out, e->second.total);
        put_u32(out, static_cast<std::uint32_t>(e->second.next.size()));
        for (auto [b, n] : e->second.next) {
            out.push_back(static_cast<char>(b));
            put_u64(out, n);
        }
    }
    put_u64(out, fnv1a64(out));
    return out;
}

NGramModel deserialize(std::string_view bytes) {
    if (bytes.size() < sizeof kMagic + 8) throw Error(ErrorCode::corrupt, "n-gram artifact truncated");
    const auto body = bytes.substr(0, bytes.size() - 8);
    {
        Reader trailer(bytes.substr(bytes.size() - 8));
        if (trailer.u64() != fnv1a64(body)) throw Error(ErrorCode::corrupt, "n-gram artifact checksum mismatch");
    }
    Reader r(body);
    if (r.take(sizeof kMagic) != std::string_view(kMagic, sizeof kMagic)) {
        throw Error(ErrorCode::corrupt, "not an n-gram artifact (bad magic)");
    }
    const auto format = r.u32();
    if (format != kFormatVersion) {
        throw Error(ErrorCode::corrupt, "unsupported n-gram artifact format version " + std::to_string(format));
    }
    const auto order = r.u32();
    const double alpha = std::bit_cast<double>(r.u64());
    if (order < 1 || order > 64 || !(alpha > 0.0) || !std::isfinite(alpha)) {
        throw Error(ErrorCode::corrupt, "n-gram artifact has invalid order or alpha");
    }
    NGramModel model(static_cast<int>(order), alpha, std::string(r.take(r.u32())));
    const std::size_t ctx_len = order - 1;
    const auto n_ctx = r.u64();
    for (std::uint64_t i = 0; i < n_ctx; ++i) {
        std::string key(r.take(r.u32()));
        if (key.empty() || static_cast<std::uint8_t>(key[0]) > ctx_len ||
            key.size() != 1 + ctx_len - static_cast<std::uint8_t>(key[0])) {
            throw Error(ErrorCode::corrupt, "n-gram artifact has a malformed context key");
        }
        NGramModel::ContextCounts counts;
        const auto total = r.u64();
        const auto n_next = r.u32();
        if (n_next > kVocabSize) throw Error(ErrorCode::corrupt, "n-gram artifact has too many successors");
        std::uint64_t sum = 0;
        int prev = -1;
        for (std::uint32_t k = 0; k < n_next; ++k) {
            const auto b = r.u8();
            const auto n = r.u64();
            if (static_cast<int>(b) <= prev || n == 0) {
                throw Error(ErrorCode::corrupt, "n-gram artifact has unsorted or zero counts");
            }
            prev = b;
            counts.next.emplace_back(b, n);
            sum += n;
        }
        if (sum != total) throw Error(ErrorCode::corrupt, "n-gram artifact context total mismatch");
        counts.total = total;
        if (!model.counts_.emplace(std::move(key), std::move(counts)).second) {
            throw Error(ErrorCode::corrupt, "n-gram artifact has duplicate contexts");
        }
    }
    if (!r.done()) throw Error(ErrorCode::corrupt, "n-gram artifact has trailing bytes");
    return model;
}

// ---------------------------------------------------------------------------
// NGramBackend

NGramBackend::NGramBackend(NGramModel model) : model_(std::make_shared<const NGramModel>(std::move(model))) {}

NGramBackend::NGramBackend(std::shared_ptr<const NGramModel> model) : model_(std::move(model)) {
    if (!model_) throw Error(ErrorCode::invalid_input, "null model");
}

std::vector<double> NGramBackend::token_logprobs(std::string_view prefix, std::string_view target) const {
    return model_->token_logprobs(prefix, target);
}

std::string NGramBackend::version() const { return model_->version(); }

void NGramBackend::train(std::span<const std::string> sequences) {
    model_ = std::make_shared<const NGramModel>(cift::train(*model_, sequences));
}

std::string NGramBackend::snapshot() const { return serialize(*model_); }

void NGramBackend::restore(std::string_view bytes) {
    model_ = std::make_shared<const NGramModel>(deserialize(bytes));
}

}  // namespace cift
