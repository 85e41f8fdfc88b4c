#pragma once

#include <zlib.h>

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <memory>
#include <string>
#include <vector>

#include "adtree/errors.hpp"
#include "adtree/model.hpp"

namespace adtree {

// Layout (all integers little-endian):
//   "ADTTRACE"  u32 version  u32 K  u32 H  u32 W  f64 cfg_scale  u64 condition
//   u32 producer_len  producer bytes  u32 record_count
//   record_count x { u32 position, f32[K] target cond, f32[K] target uncond,
//                                  f32[K] draft cond,  f32[K] draft uncond }
//   u32 crc32 over every preceding byte
inline constexpr std::array<char, 8> kTraceMagic{'A', 'D', 'T', 'T', 'R', 'A', 'C', 'E'};
inline constexpr std::uint32_t kTraceVersion = 1;

struct TraceHeader {
    std::uint32_t version = kTraceVersion;
    VocabSpec vocab;
    GridSpec grid;
    double cfg_scale = 3.0;
    Condition condition = 0;
    std::string producer;
};

struct TraceRecord {
    std::uint32_t position = 0;
    BranchLogits target;
    BranchLogits draft;
};

struct LogitTrace {
    TraceHeader header;
    std::vector<TraceRecord> records;
};

namespace detail {

class ByteWriter {
public:
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void raw(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        bytes_.insert(bytes_.end(), b, b + n);
    }
    std::vector<std::uint8_t>& bytes() noexcept { return bytes_; }

private:
    std::vector<std::uint8_t> bytes_;
};

class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
        pos_ += 8;
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string str(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    std::size_t pos() const noexcept { return pos_; }

private:
    void need(std::size_t n) const {
        if (pos_ + n > bytes_.size())
            throw TraceFormatError(TraceFormatError::Kind::truncated, "trace truncated at byte " + std::to_string(pos_));
    }

    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

inline std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
    uLong crc = ::crc32(0L, Z_NULL, 0);
    crc = ::crc32(crc, bytes.data(), static_cast<uInt>(bytes.size()));
    return static_cast<std::uint32_t>(crc);
}

inline void write_logits(ByteWriter& w, const std::vector<float>& v) {
    for (float x : v) w.f32(x);
}

inline std::vector<float> read_logits(ByteReader& r, std::size_t k) {
    std::vector<float> v(k);
    for (float& x : v) {
        x = r.f32();
        if (!std::isfinite(x)) throw TraceFormatError(TraceFormatError::Kind::malformed, "non-finite logit in trace");
    }
    return v;
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_trace(const LogitTrace& trace) {
    const auto& h = trace.header;
    const auto k = static_cast<std::size_t>(h.vocab.size);
    detail::ByteWriter w;
    w.raw(kTraceMagic.data(), kTraceMagic.size());
    w.u32(h.version);
    w.u32(static_cast<std::uint32_t>(h.vocab.size));
    w.u32(static_cast<std::uint32_t>(h.grid.height));
    w.u32(static_cast<std::uint32_t>(h.grid.width));
    w.f64(h.cfg_scale);
    w.u64(h.condition);
    w.u32(static_cast<std::uint32_t>(h.producer.size()));
    w.raw(h.producer.data(), h.producer.size());
    w.u32(static_cast<std::uint32_t>(trace.records.size()));
    for (const auto& rec : trace.records) {
        require(rec.target.cond.size() == k && rec.target.uncond.size() == k && rec.draft.cond.size() == k &&
                    rec.draft.uncond.size() == k,
                "trace record logits must have length K");
        w.u32(rec.position);
        detail::write_logits(w, rec.target.cond);
        detail::write_logits(w, rec.target.uncond);
        detail::write_logits(w, rec.draft.cond);
        detail::write_logits(w, rec.draft.uncond);
    }
    const std::uint32_t crc = detail::crc32_of(w.bytes());
    w.u32(crc);
    return std::move(w.bytes());
}

inline LogitTrace decode_trace(std::span<const std::uint8_t> bytes) {
    using Kind = TraceFormatError::Kind;
    if (bytes.size() < kTraceMagic.size() ||
        std::memcmp(bytes.data(), kTraceMagic.data(), kTraceMagic.size()) != 0)
        throw TraceFormatError(Kind::bad_magic, "not a logit trace (bad magic)");

    detail::ByteReader r(bytes.subspan(kTraceMagic.size()));
    LogitTrace trace;
    auto& h = trace.header;
    h.version = r.u32();
    if (h.version != kTraceVersion)
        throw TraceFormatError(Kind::unsupported_version, "unsupported trace version " + std::to_string(h.version));
    h.vocab.size = static_cast<std::int32_t>(r.u32());
    h.grid.height = static_cast<std::int32_t>(r.u32());
    h.grid.width = static_cast<std::int32_t>(r.u32());
    h.cfg_scale = r.f64();
    h.condition = r.u64();
    h.producer = r.str(r.u32());
    const std::uint32_t count = r.u32();
    if (h.vocab.size < 2 || h.grid.height < 1 || h.grid.width < 1)
        throw TraceFormatError(Kind::malformed, "trace header has invalid vocab or grid");

    const std::size_t k = static_cast<std::size_t>(h.vocab.size);
    const std::size_t body = static_cast<std::size_t>(count) * (4 + 16 * k);
    const std::size_t expected = kTraceMagic.size() + r.pos() + body + 4;
    if (bytes.size() < expected) throw TraceFormatError(Kind::truncated, "trace shorter than its header declares");
    if (bytes.size() > expected) throw TraceFormatError(Kind::malformed, "trailing bytes after trace");

    const std::uint32_t stored = detail::ByteReader(bytes.subspan(expected - 4)).u32();
    if (stored != detail::crc32_of(bytes.first(expected - 4)))
        throw TraceFormatError(Kind::checksum, "trace checksum mismatch");

    if (count != static_cast<std::uint32_t>(h.grid.length()))
        throw TraceFormatError(Kind::malformed, "trace record count does not equal H*W");
    trace.records.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        TraceRecord rec;
        rec.position = r.u32();
        if (rec.position != i) throw TraceFormatError(Kind::malformed, "trace records out of order");
        rec.target.cond = detail::read_logits(r, k);
        rec.target.uncond = detail::read_logits(r, k);
        rec.draft.cond = detail::read_logits(r, k);
        rec.draft.uncond = detail::read_logits(r, k);
        trace.records.push_back(std::move(rec));
    }
    return trace;
}

inline void write_trace_file(const std::filesystem::path& path, const LogitTrace& trace) {
    const auto bytes = encode_trace(trace);
    std::error_code ec;
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open trace for writing: " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing trace: " + path.string());
}

inline LogitTrace read_trace_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open trace: " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_trace(bytes);
}

/// Replays recorded logits. Records are keyed by position only: the prefix
/// contents and the condition are ignored, so a trace is one fixed context
/// per position.
class TraceLogitSource final : public LogitSource {
public:
    explicit TraceLogitSource(LogitTrace trace) : trace_(std::move(trace)) {}

    VocabSpec vocab() const override { return trace_.header.vocab; }
    GridSpec grid() const override { return trace_.header.grid; }
    std::string describe() const override { return "trace producer=" + trace_.header.producer; }
    const LogitTrace& trace() const noexcept { return trace_; }

    BranchLogits logits(Role role, std::span<const Token> prefix, Condition) const override {
        require(prefix.size() < trace_.records.size(), "prefix too long for trace");
        const auto& rec = trace_.records[prefix.size()];
        return role == Role::target ? rec.target : rec.draft;
    }

private:
    LogitTrace trace_;
};

/// Greedy target rollout; the reference context used when exporting.
inline std::vector<Token> greedy_rollout(const ModelPair& model, Condition condition) {
    std::vector<Token> seq;
    const auto n = static_cast<std::size_t>(model.grid().length());
    seq.reserve(n);
    for (std::size_t t = 0; t < n; ++t) seq.push_back(argmax(model.target(seq, condition)));
    return seq;
}

/// Records the model's branch logits along `reference` (one record per position).
inline LogitTrace capture_trace(const ModelPair& model, Condition condition, std::span<const Token> reference) {
    const auto n = static_cast<std::size_t>(model.grid().length());
    require(reference.size() >= n - 1, "reference sequence shorter than T-1");
    LogitTrace trace;
    trace.header.vocab = model.vocab();
    trace.header.grid = model.grid();
    trace.header.cfg_scale = model.cfg_scale();
    trace.header.condition = condition;
    trace.header.producer = model.source().describe();
    for (std::size_t t = 0; t < n; ++t) {
        const auto prefix = reference.first(t);
        TraceRecord rec;
        rec.position = static_cast<std::uint32_t>(t);
        rec.target = model.source().logits(Role::target, prefix, condition);
        rec.draft = model.source().logits(Role::draft, prefix, condition);
        trace.records.push_back(std::move(rec));
    }
    return trace;
}

/// Exports along the greedy target rollout and returns that reference sequence.
inline std::vector<Token> export_trace(const ModelPair& model, Condition condition,
                                       const std::filesystem::path& path) {
    auto reference = greedy_rollout(model, condition);
    write_trace_file(path, capture_trace(model, condition, reference));
    return reference;
}

inline ModelPair import_trace(const std::filesystem::path& path) {
    auto trace = read_trace_file(path);
    const double scale = trace.header.cfg_scale;
    return ModelPair(std::make_shared<TraceLogitSource>(std::move(trace)), scale);
}

}  // namespace adtree
