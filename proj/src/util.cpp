#include "cift/util.hpp"

#include "cift/error.hpp"

#include <openssl/evp.h>

#include <fcntl.h>
#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <memory>
#include <sstream>

namespace cift {

const char* to_string(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::invalid_input: return "invalid_input";
        case ErrorCode::not_found: return "not_found";
        case ErrorCode::conflict: return "conflict";
        case ErrorCode::io: return "io";
        case ErrorCode::corrupt: return "corrupt";
        case ErrorCode::backend: return "backend";
        case ErrorCode::timeout: return "timeout";
        case ErrorCode::unsupported: return "unsupported";
    }
    return "unknown";
}

std::string sha256_hex(std::string_view bytes) {
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
        EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size()) != 1 ||
        EVP_DigestFinal_ex(ctx.get(), digest, &len) != 1) {
        throw Error(ErrorCode::io, "sha256 computation failed");
    }
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    out.reserve(len * 2);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xF]);
    }
    return out;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::not_found, "cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    if (in.bad()) throw Error(ErrorCode::io, "read failed: " + path.string());
    return std::move(ss).str();
}

namespace {

void write_all(int fd, const char* data, std::size_t n, const std::filesystem::path& path) {
    while (n > 0) {
        ssize_t w = ::write(fd, data, n);
        if (w < 0) {
            ::close(fd);
            throw Error(ErrorCode::io, "write failed: " + path.string());
        }
        data += w;
        n -= static_cast<std::size_t>(w);
    }
}

void fsync_dir(const std::filesystem::path& dir) {
    int fd = ::open(dir.empty() ? "." : dir.c_str(), O_RDONLY | O_DIRECTORY);
    if (fd >= 0) {
        ::fsync(fd);
        ::close(fd);
    }
}

}  // namespace

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes,
                       const KillPointHook& hook, std::string_view label) {
    auto fire = [&](const char* suffix) {
        if (hook) hook(std::string(label) + suffix);
    };
    fire(".begin");
    auto tmp = path;
    tmp += ".tmp";
    int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
    if (fd < 0) throw Error(ErrorCode::io, "cannot create " + tmp.string());
    const std::size_t half = bytes.size() / 2;
    write_all(fd, bytes.data(), half, tmp);
    if (hook) {
        try {
            fire(".partial");
        } catch (...) {
            ::close(fd);
            throw;
        }
    }
    write_all(fd, bytes.data() + half, bytes.size() - half, tmp);
    if (::fsync(fd) != 0) {
        ::close(fd);
        throw Error(ErrorCode::io, "fsync failed: " + tmp.string());
    }
    ::close(fd);
    fire(".written");
    if (std::rename(tmp.c_str(), path.c_str()) != 0) {
        throw Error(ErrorCode::io, "rename failed: " + path.string());
    }
    fsync_dir(path.parent_path());
    fire(".renamed");
}

namespace {

std::size_t codepoint_width(unsigned char lead, std::string_view rest) {
    std::size_t n = 0;
    if (lead < 0x80) return 1;
    if ((lead & 0xE0) == 0xC0) n = 2;
    else if ((lead & 0xF0) == 0xE0) n = 3;
    else if ((lead & 0xF8) == 0xF0) n = 4;
    else return 1;
    if (rest.size() < n) return 1;
    for (std::size_t i = 1; i < n; ++i) {
        if ((static_cast<unsigned char>(rest[i]) & 0xC0) != 0x80) return 1;
    }
    return n;
}

}  // namespace

std::vector<std::string_view> utf8_codepoints(std::string_view text) {
    std::vector<std::string_view> out;
    out.reserve(text.size());
    std::size_t i = 0;
    while (i < text.size()) {
        std::size_t w = codepoint_width(static_cast<unsigned char>(text[i]), text.substr(i));
        out.push_back(text.substr(i, w));
        i += w;
    }
    return out;
}

std::size_t utf8_length(std::string_view text) {
    std::size_t count = 0;
    std::size_t i = 0;
    while (i < text.size()) {
        i += codepoint_width(static_cast<unsigned char>(text[i]), text.substr(i));
        ++count;
    }
    return count;
}

bool is_space_codepoint(std::string_view cp) noexcept {
    if (cp.size() == 1) {
        char c = cp[0];
        return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
    }
    return cp == "　";
}

std::string trim(std::string_view text) {
    auto cps = utf8_codepoints(text);
    std::size_t b = 0, e = cps.size();
    while (b < e && is_space_codepoint(cps[b])) ++b;
    while (e > b && is_space_codepoint(cps[e - 1])) --e;
    if (b == e) return {};
    const char* start = cps[b].data();
    const char* end = cps[e - 1].data() + cps[e - 1].size();
    return std::string(start, end);
}

std::string now_iso8601() {
    auto now = std::chrono::system_clock::now();
    std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::uint64_t Rng::below(std::uint64_t n) {
    // Rejection sampling keeps the draw unbiased and portable.
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
        x = engine_();
    } while (x >= limit);
    return x % n;
}

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed) noexcept {
    std::uint64_t h = seed;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace cift
