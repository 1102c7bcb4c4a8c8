#pragma once

// File plumbing: the HTSR binary tensor format, dataset manifests and class
// tables, seeded dataset splitting with exact rational fractions, annotation
// and detection text files, and directory manifests for parameter bundles.
//
// HTSR layout: magic "HTSR", version byte 0x01, dtype byte (0x01 = single,
// 0x02 = double), rank byte, rank x 8-byte little-endian extents, then the
// row-major payload as little-endian IEEE-754 words. Round-trips are
// bit-exact; a file's dtype must match the requested load type (conversion
// is a separate, explicit step).

#include <bit>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "hafpn/layers.hpp"
#include "hafpn/metrics.hpp"
#include "hafpn/tensor.hpp"

namespace hafpn {

// ---------------------------------------------------------------------------
// Strict token parsing
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::string> split_ws(const std::string& line) {
    std::istringstream is(line);
    std::vector<std::string> out;
    std::string tok;
    while (is >> tok) out.push_back(tok);
    return out;
}

inline bool parse_double_tok(const std::string& tok, double& out) {
    const char* end = tok.data() + tok.size();
    auto [ptr, ec] = std::from_chars(tok.data(), end, out);
    return ec == std::errc{} && ptr == end;
}

inline bool parse_i64_tok(const std::string& tok, long long& out) {
    const char* end = tok.data() + tok.size();
    auto [ptr, ec] = std::from_chars(tok.data(), end, out);
    return ec == std::errc{} && ptr == end;
}

inline bool parse_u64_tok(const std::string& tok, std::uint64_t& out) {
    const char* end = tok.data() + tok.size();
    auto [ptr, ec] = std::from_chars(tok.data(), end, out);
    return ec == std::errc{} && ptr == end;
}

[[noreturn]] inline void line_error(const std::string& path, std::size_t line,
                                    const std::string& what) {
    throw std::invalid_argument(path + ":" + std::to_string(line) + ": " + what);
}

inline std::string read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open file: " + path);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

inline std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open file: " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(line);
    }
    return lines;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// HTSR tensor files
// ---------------------------------------------------------------------------

inline constexpr unsigned char kHtsrVersion = 0x01;
inline constexpr unsigned char kDtypeSingle = 0x01;
inline constexpr unsigned char kDtypeDouble = 0x02;

namespace detail {

template <typename T> struct DtypeCode;
template <> struct DtypeCode<float> {
    static constexpr unsigned char value = kDtypeSingle;
};
template <> struct DtypeCode<double> {
    static constexpr unsigned char value = kDtypeDouble;
};

inline void append_le(std::string& out, std::uint64_t v, std::size_t bytes) {
    for (std::size_t i = 0; i < bytes; ++i)
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint64_t read_le(const std::string& buf, std::size_t off,
                             std::size_t bytes) {
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < bytes; ++i)
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[off + i]))
             << (8 * i);
    return v;
}

template <typename T>
std::uint64_t scalar_bits(T v) {
    if constexpr (sizeof(T) == 4)
        return std::bit_cast<std::uint32_t>(v);
    else
        return std::bit_cast<std::uint64_t>(v);
}

template <typename T>
T bits_to_scalar(std::uint64_t bits) {
    if constexpr (sizeof(T) == 4)
        return std::bit_cast<T>(static_cast<std::uint32_t>(bits));
    else
        return std::bit_cast<T>(bits);
}

}  // namespace detail

template <typename T>
void save_tensor(const std::string& path, const Tensor<T>& t) {
    require(t.rank() <= 255, "save_tensor: rank exceeds format limit");
    std::string buf = "HTSR";
    buf.push_back(static_cast<char>(kHtsrVersion));
    buf.push_back(static_cast<char>(detail::DtypeCode<T>::value));
    buf.push_back(static_cast<char>(t.rank()));
    for (std::size_t a = 0; a < t.rank(); ++a)
        detail::append_le(buf, t.extent(a), 8);
    for (std::size_t i = 0; i < t.size(); ++i)
        detail::append_le(buf, detail::scalar_bits(t[i]), sizeof(T));
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open file for writing: " + path);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw std::runtime_error("write failed: " + path);
}

// Dtype code of a tensor file, without loading the payload.
inline unsigned char tensor_file_dtype(const std::string& path) {
    const std::string buf = detail::read_file_bytes(path);
    require(buf.size() >= 7, "tensor file truncated: " + path);
    require(buf.compare(0, 4, "HTSR") == 0, "bad magic in tensor file: " + path);
    require(static_cast<unsigned char>(buf[4]) == kHtsrVersion,
            "unsupported tensor file version: " + path);
    const unsigned char dtype = static_cast<unsigned char>(buf[5]);
    require(dtype == kDtypeSingle || dtype == kDtypeDouble,
            "unknown dtype code in tensor file: " + path);
    return dtype;
}

template <typename T>
Tensor<T> load_tensor(const std::string& path) {
    const std::string buf = detail::read_file_bytes(path);
    require(buf.size() >= 7, "tensor file truncated: " + path);
    require(buf.compare(0, 4, "HTSR") == 0, "bad magic in tensor file: " + path);
    require(static_cast<unsigned char>(buf[4]) == kHtsrVersion,
            "unsupported tensor file version: " + path);
    const unsigned char dtype = static_cast<unsigned char>(buf[5]);
    require(dtype == kDtypeSingle || dtype == kDtypeDouble,
            "unknown dtype code in tensor file: " + path);
    require(dtype == detail::DtypeCode<T>::value,
            "tensor file dtype does not match requested type (no implicit "
            "conversion): " +
                path);
    const std::size_t rank = static_cast<unsigned char>(buf[6]);
    require(buf.size() >= 7 + 8 * rank, "tensor file truncated: " + path);
    Shape shape(rank);
    for (std::size_t a = 0; a < rank; ++a) {
        const std::uint64_t e = detail::read_le(buf, 7 + 8 * a, 8);
        shape[a] = static_cast<std::size_t>(e);
    }
    const std::size_t numel = shape_numel(shape);
    const std::size_t payload_off = 7 + 8 * rank;
    require(buf.size() >= payload_off + sizeof(T) * numel,
            "tensor file truncated: " + path);
    require(buf.size() == payload_off + sizeof(T) * numel,
            "trailing bytes in tensor file: " + path);
    std::vector<T> data(numel);
    for (std::size_t i = 0; i < numel; ++i)
        data[i] = detail::bits_to_scalar<T>(
            detail::read_le(buf, payload_off + i * sizeof(T), sizeof(T)));
    return Tensor<T>(std::move(shape), std::move(data));
}

// Explicit precision conversion; the only sanctioned dtype change.
template <typename To, typename From>
Tensor<To> tensor_cast(const Tensor<From>& t) {
    std::vector<To> data(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) data[i] = static_cast<To>(t[i]);
    return Tensor<To>(t.shape(), std::move(data));
}

// ---------------------------------------------------------------------------
// Parameter-bundle directory manifests
// ---------------------------------------------------------------------------

template <typename T>
void save_named_tensors(const std::string& dir,
                        const std::vector<TensorRef<T>>& refs) {
    std::filesystem::create_directories(dir);
    std::string manifest;
    for (const TensorRef<T>& r : refs) {
        require(r.name.find_first_of(" \t\n/") == std::string::npos,
                "tensor name not manifest-safe: " + r.name);
        const std::string file = r.name + ".htsr";
        save_tensor(dir + "/" + file, *r.tensor);
        manifest += r.name + " " + file + "\n";
    }
    std::ofstream out(dir + "/manifest.txt", std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write manifest in " + dir);
    out << manifest;
}

template <typename T>
void load_named_tensors(const std::string& dir,
                        const std::vector<TensorRef<T>>& refs) {
    const std::string mpath = dir + "/manifest.txt";
    std::map<std::string, std::string> files;
    const std::vector<std::string> lines = detail::read_lines(mpath);
    for (std::size_t i = 0; i < lines.size(); ++i) {
        const auto toks = detail::split_ws(lines[i]);
        if (toks.empty()) continue;
        if (toks.size() != 2)
            detail::line_error(mpath, i + 1, "expected `name file`");
        if (!files.emplace(toks[0], toks[1]).second)
            detail::line_error(mpath, i + 1, "duplicate name " + toks[0]);
    }
    for (const TensorRef<T>& r : refs) {
        auto it = files.find(r.name);
        require(it != files.end(), "manifest missing tensor: " + r.name);
        Tensor<T> t = load_tensor<T>(dir + "/" + it->second);
        require(t.shape() == r.tensor->shape(),
                "tensor " + r.name + " has shape " + shape_str(t.shape()) +
                    ", expected " + shape_str(r.tensor->shape()));
        *r.tensor = std::move(t);
    }
}

// ---------------------------------------------------------------------------
// Dataset index and class table
// ---------------------------------------------------------------------------

struct ImageEntry {
    std::string id;
    std::size_t width = 0, height = 0;
    std::string annotation_path;
};

struct DatasetIndex {
    std::vector<ImageEntry> images;
    std::vector<ClassEntry> classes;
};

// One `image_id width height annotation_path` line per image.
inline std::vector<ImageEntry> load_image_manifest(const std::string& path) {
    std::vector<ImageEntry> out;
    std::map<std::string, bool> seen;
    const std::vector<std::string> lines = detail::read_lines(path);
    for (std::size_t i = 0; i < lines.size(); ++i) {
        const auto toks = detail::split_ws(lines[i]);
        if (toks.empty()) continue;
        if (toks.size() != 4)
            detail::line_error(path, i + 1,
                               "expected `image_id width height annotation_path`");
        ImageEntry e;
        e.id = toks[0];
        std::uint64_t w = 0, h = 0;
        if (!detail::parse_u64_tok(toks[1], w) || w == 0)
            detail::line_error(path, i + 1, "bad width " + toks[1]);
        if (!detail::parse_u64_tok(toks[2], h) || h == 0)
            detail::line_error(path, i + 1, "bad height " + toks[2]);
        e.width = static_cast<std::size_t>(w);
        e.height = static_cast<std::size_t>(h);
        e.annotation_path = toks[3];
        if (!seen.emplace(e.id, true).second)
            detail::line_error(path, i + 1, "duplicate image id " + e.id);
        out.push_back(std::move(e));
    }
    return out;
}

// One `class_id name` line per class. "ineffective" is a historical alias of
// class 0 and is canonicalised to "insufficient".
inline std::vector<ClassEntry> load_class_table(const std::string& path) {
    std::vector<ClassEntry> out;
    std::map<int, bool> seen;
    const std::vector<std::string> lines = detail::read_lines(path);
    for (std::size_t i = 0; i < lines.size(); ++i) {
        const auto toks = detail::split_ws(lines[i]);
        if (toks.empty()) continue;
        if (toks.size() != 2)
            detail::line_error(path, i + 1, "expected `class_id name`");
        long long id = 0;
        if (!detail::parse_i64_tok(toks[0], id) || id < 0)
            detail::line_error(path, i + 1, "bad class id " + toks[0]);
        std::string name = toks[1];
        if (name == "ineffective") name = "insufficient";
        if (!seen.emplace(static_cast<int>(id), true).second)
            detail::line_error(path, i + 1, "duplicate class id " + toks[0]);
        out.push_back({static_cast<int>(id), std::move(name)});
    }
    require(!out.empty(), "class table is empty: " + path);
    return out;
}

// ---------------------------------------------------------------------------
// Split protocol
// ---------------------------------------------------------------------------

struct Fraction {
    std::uint64_t num = 0;
    std::uint64_t den = 1;
};

// Accepts `a/b` or a finite decimal such as `0.8`.
inline Fraction parse_fraction(const std::string& text) {
    Fraction f;
    const std::size_t slash = text.find('/');
    if (slash != std::string::npos) {
        if (!detail::parse_u64_tok(text.substr(0, slash), f.num) ||
            !detail::parse_u64_tok(text.substr(slash + 1), f.den) || f.den == 0)
            throw std::invalid_argument("bad fraction: " + text);
    } else {
        const std::size_t dot = text.find('.');
        std::string digits = text;
        std::size_t places = 0;
        if (dot != std::string::npos) {
            places = text.size() - dot - 1;
            require(places >= 1 && places <= 9, "bad fraction: " + text);
            digits = text.substr(0, dot) + text.substr(dot + 1);
        }
        if (!detail::parse_u64_tok(digits, f.num))
            throw std::invalid_argument("bad fraction: " + text);
        f.den = 1;
        for (std::size_t i = 0; i < places; ++i) f.den *= 10;
    }
    const std::uint64_t g = std::gcd(f.num, f.den);
    f.num /= g;
    f.den /= g;
    require(f.num <= f.den, "fraction exceeds 1: " + text);
    return f;
}

struct SplitSpec {
    Fraction train{4, 5}, val{1, 10}, test{1, 10};
    std::uint64_t seed = 0;
};

inline void validate_split(const SplitSpec& s) {
    for (const Fraction& f : {s.train, s.val, s.test}) {
        require(f.den >= 1 && f.den <= 1000000000ull,
                "split fraction denominator out of range");
        require(f.num <= f.den, "split fraction exceeds 1");
    }
    // Exact rational sum check on the common denominator.
    const unsigned __int128 d = static_cast<unsigned __int128>(s.train.den) *
                                s.val.den * s.test.den;
    const unsigned __int128 n =
        static_cast<unsigned __int128>(s.train.num) * s.val.den * s.test.den +
        static_cast<unsigned __int128>(s.val.num) * s.train.den * s.test.den +
        static_cast<unsigned __int128>(s.test.num) * s.train.den * s.val.den;
    require(n == d, "split fractions must sum to exactly 1");
}

struct SplitResult {
    std::vector<std::string> train, val, test;
};

inline std::size_t split_take(std::size_t n, const Fraction& f) {
    return static_cast<std::size_t>(
        static_cast<unsigned __int128>(n) * f.num / f.den);
}

// Seeded shuffle of the manifest order, then contiguous slices of size
// floor(n*f); leftover items go to train first, then val.
inline SplitResult split_dataset(const DatasetIndex& index, const SplitSpec& spec) {
    require(!index.images.empty(), "split_dataset: empty index");
    validate_split(spec);
    std::vector<std::string> ids;
    for (const ImageEntry& e : index.images) ids.push_back(e.id);

    Rng rng(spec.seed);
    for (std::size_t i = ids.size(); i-- > 1;)
        std::swap(ids[i], ids[rng.next_u64() % (i + 1)]);

    const std::size_t n = ids.size();
    std::size_t n_train = split_take(n, spec.train);
    std::size_t n_val = split_take(n, spec.val);
    const std::size_t n_test = split_take(n, spec.test);
    // Three floors lose strictly less than one item each.
    const std::size_t rest = n - n_train - n_val - n_test;
    require(rest <= 2, "split_dataset: remainder bookkeeping broke");
    if (rest >= 1) ++n_train;
    if (rest >= 2) ++n_val;

    SplitResult r;
    r.train.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
    r.val.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train),
                 ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    r.test.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_val),
                  ids.end());
    return r;
}

// ---------------------------------------------------------------------------
// Annotations and detections
// ---------------------------------------------------------------------------

// Lines `class cx cy w h`, all box values normalized to [0,1].
inline std::vector<GtBox> parse_annotation_file(const std::string& path,
                                                const std::string& image_id,
                                                std::size_t image_w,
                                                std::size_t image_h) {
    require(image_w > 0 && image_h > 0, "image dimensions must be positive");
    std::vector<GtBox> out;
    const std::vector<std::string> lines = detail::read_lines(path);
    for (std::size_t i = 0; i < lines.size(); ++i) {
        const auto toks = detail::split_ws(lines[i]);
        if (toks.empty()) continue;
        if (toks.size() != 5)
            detail::line_error(path, i + 1, "expected `class cx cy w h`");
        long long cls = 0;
        if (!detail::parse_i64_tok(toks[0], cls) || cls < 0)
            detail::line_error(path, i + 1, "bad class id " + toks[0]);
        double v[4];
        for (int k = 0; k < 4; ++k) {
            if (!detail::parse_double_tok(toks[k + 1], v[k]))
                detail::line_error(path, i + 1, "bad number " + toks[k + 1]);
            if (!(v[k] >= 0.0 && v[k] <= 1.0))
                detail::line_error(path, i + 1,
                                   "normalized value out of [0,1]: " + toks[k + 1]);
        }
        if (v[2] <= 0.0 || v[3] <= 0.0)
            detail::line_error(path, i + 1, "zero-size box");
        GtBox g;
        g.image_id = image_id;
        g.class_id = static_cast<int>(cls);
        g.box.x1 = (v[0] - v[2] / 2) * static_cast<double>(image_w);
        g.box.y1 = (v[1] - v[3] / 2) * static_cast<double>(image_h);
        g.box.x2 = (v[0] + v[2] / 2) * static_cast<double>(image_w);
        g.box.y2 = (v[1] + v[3] / 2) * static_cast<double>(image_h);
        validate_box(g.box);
        out.push_back(std::move(g));
    }
    return out;
}

// Inverse of parse_annotation_file, normalized back to `class cx cy w h`.
inline std::string serialize_annotations(const std::vector<GtBox>& boxes,
                                         std::size_t image_w,
                                         std::size_t image_h) {
    require(image_w > 0 && image_h > 0, "image dimensions must be positive");
    std::ostringstream os;
    os.precision(17);
    for (const GtBox& g : boxes) {
        validate_box(g.box);
        const double w = static_cast<double>(image_w);
        const double h = static_cast<double>(image_h);
        os << g.class_id << " " << (g.box.x1 + g.box.x2) / 2 / w << " "
           << (g.box.y1 + g.box.y2) / 2 / h << " " << (g.box.x2 - g.box.x1) / w
           << " " << (g.box.y2 - g.box.y1) / h << "\n";
    }
    return os.str();
}

// Lines `image_id class_id score x1 y1 x2 y2`, box corners in pixels.
inline std::vector<DetBox> parse_detection_file(const std::string& path) {
    std::vector<DetBox> out;
    const std::vector<std::string> lines = detail::read_lines(path);
    for (std::size_t i = 0; i < lines.size(); ++i) {
        const auto toks = detail::split_ws(lines[i]);
        if (toks.empty()) continue;
        if (toks.size() != 7)
            detail::line_error(path, i + 1,
                               "expected `image_id class_id score x1 y1 x2 y2`");
        DetBox d;
        d.image_id = toks[0];
        long long cls = 0;
        if (!detail::parse_i64_tok(toks[1], cls) || cls < 0)
            detail::line_error(path, i + 1, "bad class id " + toks[1]);
        d.class_id = static_cast<int>(cls);
        double vals[5];
        for (int k = 0; k < 5; ++k)
            if (!detail::parse_double_tok(toks[k + 2], vals[k]))
                detail::line_error(path, i + 1, "bad number " + toks[k + 2]);
        d.score = vals[0];
        d.box = {vals[1], vals[2], vals[3], vals[4]};
        try {
            validate_det(d);
        } catch (const std::invalid_argument& e) {
            detail::line_error(path, i + 1, e.what());
        }
        out.push_back(std::move(d));
    }
    return out;
}

}  // namespace hafpn
