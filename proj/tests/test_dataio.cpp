#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "hafpn/dataio.hpp"

using namespace hafpn;
namespace fs = std::filesystem;

namespace {

// Scratch directory removed when the test case ends.
struct TempDir {
    fs::path path;
    TempDir() {
        static std::mt19937_64 gen(std::random_device{}());
        path = fs::temp_directory_path() /
               ("hafpn_dataio_" + std::to_string(gen()));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << content;
}

std::string read_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

Tensor<double> random_tensor(Shape shape, std::uint64_t seed) {
    Rng rng(seed);
    return rand_uniform<double>(shape, rng, -3.0, 3.0);
}

DatasetIndex make_index(std::size_t n) {
    DatasetIndex idx;
    for (std::size_t i = 0; i < n; ++i)
        idx.images.push_back({"img_" + std::to_string(i), 64, 64, "none"});
    idx.classes = {{0, "insufficient"}, {1, "shifting"}};
    return idx;
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor files
// ---------------------------------------------------------------------------

TEST_CASE("tensor files round-trip bit-exactly in both precisions", "[dataio]") {
    TempDir td;
    const Tensor<double> t = random_tensor({3, 4, 5}, 77);
    save_tensor(td.file("a.htsr"), t);
    const Tensor<double> back = load_tensor<double>(td.file("a.htsr"));
    REQUIRE(back.shape() == t.shape());
    for (std::size_t i = 0; i < t.size(); ++i) REQUIRE(back[i] == t[i]);
    REQUIRE(tensor_file_dtype(td.file("a.htsr")) == kDtypeDouble);

    Rng rng(78);
    const Tensor<float> tf = rand_uniform<float>({2, 6}, rng, -1.0f, 1.0f);
    save_tensor(td.file("b.htsr"), tf);
    const Tensor<float> backf = load_tensor<float>(td.file("b.htsr"));
    for (std::size_t i = 0; i < tf.size(); ++i) REQUIRE(backf[i] == tf[i]);
    REQUIRE(tensor_file_dtype(td.file("b.htsr")) == kDtypeSingle);

    // Exact file sizes: header 7 + rank*8 extents + payload.
    REQUIRE(fs::file_size(td.file("a.htsr")) == 7 + 3 * 8 + 60 * sizeof(double));
    REQUIRE(fs::file_size(td.file("b.htsr")) == 7 + 2 * 8 + 12 * sizeof(float));
}

TEST_CASE("tensor file header bytes are laid out as documented", "[dataio]") {
    TempDir td;
    Tensor<double> t({2}, {1.0, -2.5});
    save_tensor(td.file("h.htsr"), t);
    const std::string buf = read_bytes(td.file("h.htsr"));
    REQUIRE(buf.size() == 7 + 8 + 16);
    REQUIRE(buf.compare(0, 4, "HTSR") == 0);
    REQUIRE(static_cast<unsigned char>(buf[4]) == 0x01);  // version
    REQUIRE(static_cast<unsigned char>(buf[5]) == 0x02);  // double
    REQUIRE(static_cast<unsigned char>(buf[6]) == 0x01);  // rank
    // Little-endian extent 2.
    REQUIRE(static_cast<unsigned char>(buf[7]) == 2);
    for (int i = 8; i < 15; ++i) REQUIRE(buf[static_cast<std::size_t>(i)] == 0);
    // 1.0 is 0x3FF0000000000000 little-endian.
    REQUIRE(static_cast<unsigned char>(buf[21]) == 0xF0);
    REQUIRE(static_cast<unsigned char>(buf[22]) == 0x3F);
}

TEST_CASE("malformed tensor files are rejected", "[dataio]") {
    TempDir td;
    const Tensor<double> t = random_tensor({2, 3}, 79);
    save_tensor(td.file("ok.htsr"), t);
    const std::string good = read_bytes(td.file("ok.htsr"));

    auto expect_reject = [&](std::string bytes, const std::string& label) {
        INFO(label);
        write_file(td.file("bad.htsr"), bytes);
        REQUIRE_THROWS(load_tensor<double>(td.file("bad.htsr")));
    };
    std::string bad = good;
    bad[0] = 'X';
    expect_reject(bad, "magic");
    bad = good;
    bad[4] = 0x02;
    expect_reject(bad, "version");
    bad = good;
    bad[5] = 0x03;
    expect_reject(bad, "dtype code");
    expect_reject(good.substr(0, good.size() - 1), "truncated payload");
    expect_reject(good.substr(0, 5), "truncated header");
    expect_reject(good + "x", "trailing bytes");
    expect_reject("", "empty file");

    // The valid original still loads after all that.
    REQUIRE_NOTHROW(load_tensor<double>(td.file("ok.htsr")));
}

TEST_CASE("precision conversion is explicit only", "[dataio]") {
    TempDir td;
    Rng rng(80);
    const Tensor<float> tf = rand_uniform<float>({4, 4}, rng, -2.0f, 2.0f);
    save_tensor(td.file("f.htsr"), tf);
    // Reading a single-precision file as double must fail loudly...
    REQUIRE_THROWS(load_tensor<double>(td.file("f.htsr")));
    // ...and the sanctioned path is an explicit cast after an honest load.
    const Tensor<double> widened = tensor_cast<double>(load_tensor<float>(td.file("f.htsr")));
    for (std::size_t i = 0; i < tf.size(); ++i)
        REQUIRE(widened[i] == static_cast<double>(tf[i]));
}

TEST_CASE("saving a tensor twice produces identical bytes", "[dataio]") {
    TempDir td;
    const Tensor<double> t = random_tensor({2, 5, 3}, 81);
    save_tensor(td.file("one.htsr"), t);
    save_tensor(td.file("two.htsr"), t);
    REQUIRE(read_bytes(td.file("one.htsr")) == read_bytes(td.file("two.htsr")));
}

TEST_CASE("named tensor bundles restore through the manifest", "[dataio]") {
    TempDir td;
    Tensor<double> a = random_tensor({3, 2}, 82);
    Tensor<double> b = random_tensor({4}, 83);
    const Tensor<double> a0 = a, b0 = b;
    save_named_tensors<double>(td.file("bundle"), {{"alpha", &a}, {"beta", &b}});

    a = zeros_like(a);
    b = zeros_like(b);
    load_named_tensors<double>(td.file("bundle"), {{"alpha", &a}, {"beta", &b}});
    for (std::size_t i = 0; i < a.size(); ++i) REQUIRE(a[i] == a0[i]);
    for (std::size_t i = 0; i < b.size(); ++i) REQUIRE(b[i] == b0[i]);

    // Asking for a name the manifest does not carry fails.
    Tensor<double> c = zeros<double>({3, 2});
    REQUIRE_THROWS(load_named_tensors<double>(td.file("bundle"), {{"gamma", &c}}));
    // A shape disagreement fails even when the name matches.
    Tensor<double> wrong = zeros<double>({2, 3});
    REQUIRE_THROWS(load_named_tensors<double>(td.file("bundle"), {{"alpha", &wrong}}));
    // Names that would break the manifest line format are refused on save.
    REQUIRE_THROWS(save_named_tensors<double>(td.file("bundle2"), {{"bad name", &a}}));
}

// ---------------------------------------------------------------------------
// Manifests and class tables
// ---------------------------------------------------------------------------

TEST_CASE("image manifest parsing", "[dataio]") {
    TempDir td;
    write_file(td.file("imgs.txt"),
               "img1 640 480 anns/img1.txt\n\nimg2 320 240 anns/img2.txt\n");
    const auto entries = load_image_manifest(td.file("imgs.txt"));
    REQUIRE(entries.size() == 2);
    REQUIRE(entries[0].id == "img1");
    REQUIRE(entries[0].width == 640);
    REQUIRE(entries[0].height == 480);
    REQUIRE(entries[0].annotation_path == "anns/img1.txt");
    REQUIRE(entries[1].id == "img2");

    write_file(td.file("dup.txt"), "a 1 1 x\na 2 2 y\n");
    REQUIRE_THROWS_WITH(load_image_manifest(td.file("dup.txt")),
                        Catch::Matchers::ContainsSubstring(":2:"));
    write_file(td.file("short.txt"), "a 1 1\n");
    REQUIRE_THROWS(load_image_manifest(td.file("short.txt")));
    write_file(td.file("zero.txt"), "a 0 5 x\n");
    REQUIRE_THROWS(load_image_manifest(td.file("zero.txt")));
    REQUIRE_THROWS(load_image_manifest(td.file("missing.txt")));
}

TEST_CASE("class table parsing and the historical alias", "[dataio]") {
    TempDir td;
    write_file(td.file("classes.txt"), "0 insufficient\n1 shifting\n");
    auto classes = load_class_table(td.file("classes.txt"));
    REQUIRE(classes.size() == 2);
    REQUIRE(classes[0].id == 0);
    REQUIRE(classes[0].name == "insufficient");
    REQUIRE(classes[1].name == "shifting");

    // Older annotation sets write "ineffective" for class 0.
    write_file(td.file("alias.txt"), "0 ineffective\n1 shifting\n");
    classes = load_class_table(td.file("alias.txt"));
    REQUIRE(classes[0].name == "insufficient");

    write_file(td.file("dup.txt"), "0 a\n0 b\n");
    REQUIRE_THROWS_WITH(load_class_table(td.file("dup.txt")),
                        Catch::Matchers::ContainsSubstring(":2:"));
    write_file(td.file("empty.txt"), "\n");
    REQUIRE_THROWS(load_class_table(td.file("empty.txt")));
    write_file(td.file("toks.txt"), "0 two words\n");
    REQUIRE_THROWS(load_class_table(td.file("toks.txt")));
}

// ---------------------------------------------------------------------------
// Split protocol
// ---------------------------------------------------------------------------

TEST_CASE("fractions parse from ratio and decimal forms", "[dataio]") {
    REQUIRE(parse_fraction("4/5").num == 4);
    REQUIRE(parse_fraction("4/5").den == 5);
    // Decimal forms land in lowest terms.
    REQUIRE(parse_fraction("0.8").num == 4);
    REQUIRE(parse_fraction("0.8").den == 5);
    REQUIRE(parse_fraction("0.25").num == 1);
    REQUIRE(parse_fraction("0.25").den == 4);
    REQUIRE(parse_fraction("1").num == 1);
    REQUIRE(parse_fraction("1").den == 1);
    REQUIRE(parse_fraction("2/4").num == 1);
    REQUIRE(parse_fraction("2/4").den == 2);
    REQUIRE_THROWS(parse_fraction("1/0"));
    REQUIRE_THROWS(parse_fraction("a/b"));
    REQUIRE_THROWS(parse_fraction("0.5.5"));
    REQUIRE_THROWS(parse_fraction(""));
}

TEST_CASE("split fractions must sum exactly to one", "[dataio]") {
    REQUIRE_NOTHROW(validate_split(SplitSpec{}));  // default 4/5, 1/10, 1/10
    SplitSpec ok{{1, 2}, {1, 4}, {1, 4}, 0};
    REQUIRE_NOTHROW(validate_split(ok));
    SplitSpec mixed{{8, 10}, {1, 10}, {10, 100}, 0};  // same value, different denominators
    REQUIRE_NOTHROW(validate_split(mixed));
    SplitSpec low{{1, 2}, {1, 5}, {1, 5}, 0};  // 0.5 + 0.2 + 0.2 = 0.9
    REQUIRE_THROWS(validate_split(low));
    SplitSpec high{{4, 5}, {1, 10}, {1, 5}, 0};
    REQUIRE_THROWS(validate_split(high));
    SplitSpec over{{3, 2}, {1, 10}, {1, 10}, 0};  // individual fraction above 1
    REQUIRE_THROWS(validate_split(over));
}

TEST_CASE("split sizes follow floor-plus-remainder bookkeeping", "[dataio]") {
    SplitSpec spec;
    spec.seed = 7;
    const auto big = split_dataset(make_index(3154), spec);
    REQUIRE(big.train.size() == 2524);
    REQUIRE(big.val.size() == 315);
    REQUIRE(big.test.size() == 315);

    const auto small = split_dataset(make_index(10), spec);
    REQUIRE(small.train.size() == 8);
    REQUIRE(small.val.size() == 1);
    REQUIRE(small.test.size() == 1);

    const auto one = split_dataset(make_index(1), spec);
    REQUIRE(one.train.size() == 1);
    REQUIRE(one.val.empty());
    REQUIRE(one.test.empty());
}

TEST_CASE("splitting is deterministic per seed and differs across seeds", "[dataio]") {
    const DatasetIndex idx = make_index(200);
    SplitSpec a;
    a.seed = 11;
    SplitSpec b;
    b.seed = 12;
    const auto r1 = split_dataset(idx, a);
    const auto r2 = split_dataset(idx, a);
    REQUIRE(r1.train == r2.train);
    REQUIRE(r1.val == r2.val);
    REQUIRE(r1.test == r2.test);
    const auto r3 = split_dataset(idx, b);
    REQUIRE(r1.train != r3.train);
}

TEST_CASE("every split is a partition of the input ids", "[dataio]") {
    std::mt19937 gen(905);
    std::uniform_int_distribution<std::size_t> size(1, 400);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = size(gen);
        const DatasetIndex idx = make_index(n);
        SplitSpec spec;
        spec.seed = gen();
        const auto r = split_dataset(idx, spec);
        REQUIRE(r.train.size() + r.val.size() + r.test.size() == n);
        std::set<std::string> all;
        for (const auto* part : {&r.train, &r.val, &r.test})
            for (const std::string& id : *part) REQUIRE(all.insert(id).second);
        for (const ImageEntry& e : idx.images) REQUIRE(all.count(e.id) == 1);
    }
}

// ---------------------------------------------------------------------------
// Annotations and detections
// ---------------------------------------------------------------------------

TEST_CASE("annotation lines convert from normalized center form to pixels", "[dataio]") {
    TempDir td;
    write_file(td.file("a.txt"), "0 0.5 0.5 1.0 1.0\n");
    auto boxes = parse_annotation_file(td.file("a.txt"), "imgA", 100, 100);
    REQUIRE(boxes.size() == 1);
    REQUIRE(boxes[0].class_id == 0);
    REQUIRE(boxes[0].image_id == "imgA");
    REQUIRE(boxes[0].box.x1 == 0.0);
    REQUIRE(boxes[0].box.y1 == 0.0);
    REQUIRE(boxes[0].box.x2 == 100.0);
    REQUIRE(boxes[0].box.y2 == 100.0);

    write_file(td.file("b.txt"), "1 0.25 0.25 0.5 0.5\n");
    boxes = parse_annotation_file(td.file("b.txt"), "imgB", 200, 100);
    REQUIRE(boxes[0].box.x1 == 0.0);
    REQUIRE(boxes[0].box.y1 == 0.0);
    REQUIRE(boxes[0].box.x2 == 100.0);
    REQUIRE(boxes[0].box.y2 == 50.0);
}

TEST_CASE("annotation errors carry the offending line number", "[dataio]") {
    TempDir td;
    write_file(td.file("bad.txt"), "0 0.5 0.5 1.0 1.0\n0 0.5 0.5 1.5 1.0\n");
    REQUIRE_THROWS_WITH(parse_annotation_file(td.file("bad.txt"), "x", 100, 100),
                        Catch::Matchers::ContainsSubstring(":2:"));
    write_file(td.file("zero.txt"), "0 0.5 0.5 0 0.1\n");
    REQUIRE_THROWS(parse_annotation_file(td.file("zero.txt"), "x", 100, 100));
    write_file(td.file("toks.txt"), "0 0.5 0.5 1.0\n");
    REQUIRE_THROWS(parse_annotation_file(td.file("toks.txt"), "x", 100, 100));
    write_file(td.file("cls.txt"), "-1 0.5 0.5 1.0 1.0\n");
    REQUIRE_THROWS(parse_annotation_file(td.file("cls.txt"), "x", 100, 100));
    write_file(td.file("nan.txt"), "0 q 0.5 1.0 1.0\n");
    REQUIRE_THROWS(parse_annotation_file(td.file("nan.txt"), "x", 100, 100));
}

TEST_CASE("serializing then reparsing annotations is exact", "[dataio]") {
    TempDir td;
    std::mt19937 gen(906);
    std::uniform_real_distribution<double> c(0.3, 0.7), s(0.05, 0.5);
    std::vector<GtBox> boxes;
    for (int i = 0; i < 25; ++i) {
        const double cx = c(gen), cy = c(gen), w = s(gen), h = s(gen);
        GtBox g;
        g.image_id = "img";
        g.class_id = i % 2;
        g.box = {(cx - w / 2) * 640, (cy - h / 2) * 480, (cx + w / 2) * 640,
                 (cy + h / 2) * 480};
        boxes.push_back(g);
    }
    const std::string text = serialize_annotations(boxes, 640, 480);
    write_file(td.file("round.txt"), text);
    const auto back = parse_annotation_file(td.file("round.txt"), "img", 640, 480);
    REQUIRE(back.size() == boxes.size());
    for (std::size_t i = 0; i < boxes.size(); ++i) {
        REQUIRE(back[i].class_id == boxes[i].class_id);
        // 17 significant digits round-trip doubles exactly; the only slack is
        // the corner<->center remapping arithmetic.
        REQUIRE(back[i].box.x1 == Catch::Approx(boxes[i].box.x1).margin(1e-9));
        REQUIRE(back[i].box.y1 == Catch::Approx(boxes[i].box.y1).margin(1e-9));
        REQUIRE(back[i].box.x2 == Catch::Approx(boxes[i].box.x2).margin(1e-9));
        REQUIRE(back[i].box.y2 == Catch::Approx(boxes[i].box.y2).margin(1e-9));
    }
}

TEST_CASE("serialization is idempotent and normalizes whitespace", "[dataio]") {
    TempDir td;
    // Dyadic coordinates on power-of-two image extents keep every remapping
    // exact, so idempotence here is bitwise, not approximate.
    write_file(td.file("messy.txt"),
               "0   0.5 0.25 0.25 0.125\n\n  1 0.75 0.5 0.0625 0.25  \n");
    // (The odd spacing above includes double blanks and a blank line.)
    const auto parsed = parse_annotation_file(td.file("messy.txt"), "img", 512, 256);
    REQUIRE(parsed.size() == 2);
    const std::string canon = serialize_annotations(parsed, 512, 256);
    write_file(td.file("canon.txt"), canon);
    const auto reparsed = parse_annotation_file(td.file("canon.txt"), "img", 512, 256);
    REQUIRE(reparsed.size() == parsed.size());
    for (std::size_t i = 0; i < parsed.size(); ++i) {
        REQUIRE(reparsed[i].box.x1 == parsed[i].box.x1);
        REQUIRE(reparsed[i].box.y1 == parsed[i].box.y1);
        REQUIRE(reparsed[i].box.x2 == parsed[i].box.x2);
        REQUIRE(reparsed[i].box.y2 == parsed[i].box.y2);
    }
    REQUIRE(serialize_annotations(reparsed, 512, 256) == canon);
}

TEST_CASE("detection files parse and validate per line", "[dataio]") {
    TempDir td;
    write_file(td.file("d.txt"), "imgA 0 0.9 0 0 10 10\nimgA 1 0.5 5 5 8 9\n");
    const auto dets = parse_detection_file(td.file("d.txt"));
    REQUIRE(dets.size() == 2);
    REQUIRE(dets[0].image_id == "imgA");
    REQUIRE(dets[0].class_id == 0);
    REQUIRE(dets[0].score == 0.9);
    REQUIRE(dets[0].box.x2 == 10.0);
    REQUIRE(dets[1].class_id == 1);

    write_file(td.file("score.txt"), "imgA 0 1.5 0 0 10 10\n");
    REQUIRE_THROWS_WITH(parse_detection_file(td.file("score.txt")),
                        Catch::Matchers::ContainsSubstring(":1:"));
    write_file(td.file("toks.txt"), "imgA 0 0.9 0 0 10\n");
    REQUIRE_THROWS(parse_detection_file(td.file("toks.txt")));
    write_file(td.file("box.txt"), "imgA 0 0.9 10 0 0 10\n");
    REQUIRE_THROWS(parse_detection_file(td.file("box.txt")));
    write_file(td.file("empty.txt"), "");
    REQUIRE(parse_detection_file(td.file("empty.txt")).empty());
}
