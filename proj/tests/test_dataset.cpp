#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "fallfuse/dataset.hpp"
#include "fallfuse/error.hpp"
#include "fallfuse/image_io.hpp"
#include "fallfuse/rng.hpp"

namespace fs = std::filesystem;
using namespace fallfuse;

namespace {

// Fresh scratch directory per test case.
struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("fallfuse_test_" + tag);
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string str() const { return path.string(); }
};

void write_file(const fs::path& p, const std::string& text) {
    fs::create_directories(p.parent_path());
    std::ofstream out(p);
    out << text;
}

CorpusLayout test_layout(const std::string& root) {
    CorpusLayout layout;
    layout.root = root;
    layout.sensor_csv = "sensor.csv";
    return layout;
}

// Loader that synthesizes a frame without touching disk; timestamp carries
// through so alignment choices stay observable.
FrameLoader stub_loader() {
    return [](const FrameEntry& entry, int camera) {
        return FrameGray{std::vector<double>(kFramePixels, 0.5), camera, entry.timestamp_ms};
    };
}

FrameIndex index_of(std::vector<std::int64_t> timestamps, int camera) {
    FrameIndex idx;
    idx.camera = camera;
    std::sort(timestamps.begin(), timestamps.end());
    for (std::int64_t t : timestamps) idx.entries.push_back({t, "mem://" + std::to_string(t)});
    return idx;
}

std::vector<std::byte> read_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in);
    std::vector<std::byte> bytes;
    char c;
    while (in.get(c)) bytes.push_back(static_cast<std::byte>(c));
    return bytes;
}

// Best single threshold on one feature, evaluated exhaustively.
double stump_accuracy(const std::vector<FusedExample>& data, std::size_t feature) {
    std::vector<std::pair<double, int>> points;
    for (const FusedExample& e : data) points.emplace_back(e.sensor[feature], e.label.value);
    std::sort(points.begin(), points.end());
    const std::size_t n = points.size();
    std::size_t total_pos = 0;
    for (const auto& [v, y] : points) total_pos += static_cast<std::size_t>(y);
    // Predict 1 above the threshold: sweep all cut positions.
    std::size_t best = 0;
    std::size_t pos_below = 0;
    for (std::size_t cut = 0; cut <= n; ++cut) {
        // correct = negatives below cut + positives at/above cut
        const std::size_t neg_below = cut - pos_below;
        const std::size_t correct = neg_below + (total_pos - pos_below);
        best = std::max(best, correct);
        if (cut < n) pos_below += static_cast<std::size_t>(points[cut].second);
    }
    return static_cast<double>(best) / static_cast<double>(n);
}

}  // namespace

TEST_CASE("ingest reads wrist columns and recomputes magnitude") {
    TempDir dir("ingest");
    write_file(dir.path / "sensor.csv",
               "timestamp,subject,activity,trial,wrist_ax,wrist_ay,wrist_az,other\n"
               "1000,1,1,1,0.1,0.2,0.3,9\n"
               "1050,1,6,1,3,4,0,9\n"
               "1100,1,2,2,-1,-1,1,9\n"
               "1150,2,1,1,5,5,5,9\n");
    IngestResult r = ingest_sensor_csv(test_layout(dir.str()), {1});
    CHECK(r.samples.size() == 3);  // subject 2 filtered out
    CHECK(r.dropped == 0);
    CHECK(r.samples[1].sv_total == doctest::Approx(5.0).epsilon(1e-12));
    for (const SensorSample& s : r.samples) {
        CHECK(s.sv_total == doctest::Approx(magnitude(s.ax, s.ay, s.az)).epsilon(1e-12));
        CHECK(s.subject == 1);
    }
}

TEST_CASE("ingest drops unparseable rows and counts them") {
    TempDir dir("ingest_drop");
    write_file(dir.path / "sensor.csv",
               "timestamp,subject,activity,trial,wrist_ax,wrist_ay,wrist_az\n"
               "1000,1,1,1,,0.2,0.3\n"
               "1050,1,1,1,0.4,0.2,0.3\n"
               "bogus,1,1,1,0.4,0.2,0.3\n");
    IngestResult r = ingest_sensor_csv(test_layout(dir.str()), {1});
    CHECK(r.samples.size() == 1);
    CHECK(r.dropped == 2);
}

TEST_CASE("ingest errors name the missing column") {
    TempDir dir("ingest_schema");
    write_file(dir.path / "sensor.csv", "timestamp,subject,activity,trial,wrist_ax,wrist_ay\n");
    try {
        ingest_sensor_csv(test_layout(dir.str()), {1});
        FAIL("expected SchemaError");
    } catch (const SchemaError& e) {
        CHECK(std::string(e.what()).find("wrist_az") != std::string::npos);
    }
}

TEST_CASE("ingest of a generated CSV matches per-row recomputation") {
    TempDir dir("ingest_bulk");
    Rng rng(17);
    std::string csv = "timestamp,subject,activity,trial,wrist_ax,wrist_ay,wrist_az\n";
    std::vector<double> expected;
    for (int i = 0; i < 1000; ++i) {
        const double ax = rng.uniform(-3, 3), ay = rng.uniform(-3, 3), az = rng.uniform(-3, 3);
        expected.push_back(std::sqrt(ax * ax + ay * ay + az * az));
        char row[160];
        std::snprintf(row, sizeof(row), "%d,1,%d,1,%.17g,%.17g,%.17g\n", 1000 + 10 * i,
                      1 + i % 11, ax, ay, az);
        csv += row;
    }
    write_file(dir.path / "sensor.csv", csv);
    IngestResult r = ingest_sensor_csv(test_layout(dir.str()), {1});
    REQUIRE(r.samples.size() == 1000);
    for (std::size_t i = 0; i < 1000; ++i) {
        CHECK(std::abs(r.samples[i].sv_total - expected[i]) <= 1e-12);
    }
}

TEST_CASE("frame index sorts, dedups and skips junk") {
    TempDir dir("frames");
    const fs::path cam = dir.path / "S1" / "A1" / "T1" / "cam1";
    fs::create_directories(cam);
    const std::vector<int> shuffled = {1300, 1000, 1200, 1100, 1400, 1034, 1500, 1250, 1600, 999};
    for (int t : shuffled) write_file(cam / (std::to_string(t) + ".png"), "x");
    write_file(cam / "notaframe.png", "x");

    CorpusLayout layout = test_layout(dir.str());
    FrameIndex idx = index_frames(layout, 1);
    CHECK(idx.entries.size() == 10);
    CHECK(idx.skipped == 1);
    CHECK(std::is_sorted(idx.entries.begin(), idx.entries.end(),
                         [](const FrameEntry& a, const FrameEntry& b) {
                             return a.timestamp_ms < b.timestamp_ms;
                         }));

    // A colliding timestamp in another trial directory is deduplicated.
    const fs::path cam_t2 = dir.path / "S1" / "A1" / "T2" / "cam1";
    write_file(cam_t2 / "1300.png", "x");
    FrameIndex idx2 = index_frames(layout, 1);
    CHECK(idx2.entries.size() == 10);
    CHECK(idx2.duplicates == 1);

    CHECK_THROWS_AS(index_frames(layout, 2), CorpusError);  // no cam2 directory
    CHECK_THROWS_AS(index_frames(layout, 3), InputError);
}

TEST_CASE("align basics") {
    SensorSample s;
    s.timestamp_ms = 1000;
    s.ax = 1;
    s.ay = 0;
    s.az = 0;
    s.sv_total = 1;
    s.activity_id = 1;

    FrameIndex cam1 = index_of({1000}, 1);
    FrameIndex cam2 = index_of({1000}, 2);
    AlignResult r = align({s}, cam1, cam2, 100, stub_loader(), {1});
    CHECK(r.fused.size() == 1);
    CHECK(r.unmatched == 0);
    CHECK(r.fused[0].label.value == 1);
    CHECK(r.fused[0].sensor == std::vector<double>{1, 0, 0, 1});

    // Nearest cam2 frame outside tolerance rejects the sample.
    FrameIndex far = index_of({1200}, 2);
    AlignResult r2 = align({s}, cam1, far, 100, stub_loader(), {1});
    CHECK(r2.fused.empty());
    CHECK(r2.unmatched == 1);
}

TEST_CASE("align matches an exhaustive nearest-neighbour oracle") {
    Rng rng(23);
    std::vector<std::int64_t> f1, f2;
    for (int i = 0; i < 120; ++i) {
        f1.push_back(1000 + 55 * i + static_cast<std::int64_t>(rng.below(30)));
        f2.push_back(980 + 55 * i + static_cast<std::int64_t>(rng.below(30)));
    }
    FrameIndex cam1 = index_of(f1, 1);
    FrameIndex cam2 = index_of(f2, 2);

    std::vector<SensorSample> samples;
    for (int i = 0; i < 500; ++i) {
        SensorSample s;
        s.timestamp_ms = 950 + static_cast<std::int64_t>(rng.below(7000));
        s.ax = 1;
        s.sv_total = 1;
        s.activity_id = 6;
        samples.push_back(s);
    }
    std::sort(samples.begin(), samples.end(),
              [](const SensorSample& a, const SensorSample& b) {
                  return a.timestamp_ms < b.timestamp_ms;
              });

    const int tol = 40;
    AlignResult got = align(samples, cam1, cam2, tol, stub_loader(), {1});

    // Oracle: scan every frame for the true nearest, earlier frame on ties.
    const auto nearest = [](const std::vector<FrameEntry>& entries, std::int64_t ts) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < entries.size(); ++i) {
            const std::int64_t di = std::llabs(entries[i].timestamp_ms - ts);
            const std::int64_t db = std::llabs(entries[best].timestamp_ms - ts);
            if (di < db) best = i;
        }
        return best;
    };
    std::size_t expected_count = 0;
    std::size_t got_i = 0;
    for (const SensorSample& s : samples) {
        const std::size_t i1 = nearest(cam1.entries, s.timestamp_ms);
        const std::size_t i2 = nearest(cam2.entries, s.timestamp_ms);
        const bool match =
            std::llabs(cam1.entries[i1].timestamp_ms - s.timestamp_ms) <= tol &&
            std::llabs(cam2.entries[i2].timestamp_ms - s.timestamp_ms) <= tol;
        if (!match) continue;
        ++expected_count;
        REQUIRE(got_i < got.fused.size());
        CHECK(got.fused[got_i].timestamp_ms == s.timestamp_ms);
        CHECK(got.fused[got_i].cam1.timestamp_ms == cam1.entries[i1].timestamp_ms);
        CHECK(got.fused[got_i].cam2.timestamp_ms == cam2.entries[i2].timestamp_ms);
        ++got_i;
    }
    CHECK(got.fused.size() == expected_count);
    CHECK(got.unmatched == static_cast<std::int64_t>(samples.size() - expected_count));
}

TEST_CASE("raising the alignment tolerance never loses examples") {
    Rng rng(29);
    std::vector<std::int64_t> f;
    for (int i = 0; i < 60; ++i) f.push_back(1000 + 90 * i);
    FrameIndex cam1 = index_of(f, 1);
    FrameIndex cam2 = index_of(f, 2);
    std::vector<SensorSample> samples;
    for (int i = 0; i < 200; ++i) {
        SensorSample s;
        s.timestamp_ms = 1000 + static_cast<std::int64_t>(rng.below(5500));
        s.activity_id = 6;
        samples.push_back(s);
    }
    std::size_t prev = 0;
    for (int tol : {0, 10, 25, 45, 90, 200}) {
        AlignResult r = align(samples, cam1, cam2, tol, stub_loader(), {1});
        CHECK(r.fused.size() >= prev);
        prev = r.fused.size();
    }
}

namespace {

std::vector<FusedExample> tiny_corpus(int n, double prevalence, std::uint64_t seed) {
    SynthConfig cfg;
    cfg.count = n;
    cfg.prevalence = prevalence;
    cfg.seed = seed;
    return synth_generate(cfg);
}

}  // namespace

TEST_CASE("split produces exact stratified sizes deterministically") {
    std::vector<FusedExample> corpus = tiny_corpus(100, 0.5, 3);
    SplitSpec spec;
    spec.seed = 7;
    Splits a = split(corpus, spec);
    CHECK(a.train.size() == 60);
    CHECK(a.val.size() == 20);
    CHECK(a.test.size() == 20);

    Splits b = split(corpus, spec);
    for (std::size_t i = 0; i < a.train.size(); ++i) {
        CHECK(a.train[i].timestamp_ms == b.train[i].timestamp_ms);
    }
    for (std::size_t i = 0; i < a.test.size(); ++i) {
        CHECK(a.test[i].timestamp_ms == b.test[i].timestamp_ms);
    }
}

TEST_CASE("split degrades gracefully on single-class input") {
    std::vector<FusedExample> corpus = tiny_corpus(100, 0.5, 3);
    for (FusedExample& e : corpus) e.label.value = 0;
    Splits s = split(corpus, SplitSpec{});
    CHECK(s.train.size() == 60);
    CHECK(s.val.size() == 20);
    CHECK(s.test.size() == 20);
    CHECK(s.warnings.size() == 3);
}

TEST_CASE("split is a partition with stable prevalence") {
    std::vector<FusedExample> corpus = tiny_corpus(1000, 0.3, 9);
    Splits s = split(corpus, SplitSpec{});
    CHECK(s.train.size() + s.val.size() + s.test.size() == corpus.size());

    std::multiset<std::int64_t> in, out;
    for (const FusedExample& e : corpus) in.insert(e.timestamp_ms);
    for (const auto* part : {&s.train, &s.val, &s.test}) {
        for (const FusedExample& e : *part) out.insert(e.timestamp_ms);
    }
    CHECK(in == out);

    double overall = 0.0;
    for (const FusedExample& e : corpus) overall += e.label.value;
    overall /= static_cast<double>(corpus.size());
    for (const auto* part : {&s.train, &s.val, &s.test}) {
        double prev = 0.0;
        for (const FusedExample& e : *part) prev += e.label.value;
        prev /= static_cast<double>(part->size());
        CHECK(std::abs(prev - overall) <= 0.02);
    }
}

TEST_CASE("split guards") {
    std::vector<FusedExample> tiny = tiny_corpus(9, 0.5, 1);
    CHECK_THROWS_AS(split(tiny, SplitSpec{}), InputError);
    SplitSpec bad;
    bad.train = 0.5;
    bad.val = 0.2;
    bad.test = 0.2;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("synth prevalence lands in the binomial window") {
    std::vector<FusedExample> ex = tiny_corpus(100, 0.5, 1);
    CHECK(ex.size() == 100);
    double mean = 0.0;
    for (const FusedExample& e : ex) mean += e.label.value;
    mean /= 100.0;
    CHECK(mean >= 0.35);
    CHECK(mean <= 0.65);
}

TEST_CASE("noiseless synth separates classes perfectly on sv_total") {
    SynthConfig cfg;
    cfg.count = 300;
    cfg.noise_sigma = 0.0;
    cfg.seed = 5;
    std::vector<FusedExample> ex = synth_generate(cfg);
    double min_fall = 1e300, max_daily = -1e300;
    for (const FusedExample& e : ex) {
        if (e.label.value) min_fall = std::min(min_fall, e.sensor[3]);
        else max_daily = std::max(max_daily, e.sensor[3]);
    }
    CHECK(min_fall > max_daily);
}

TEST_CASE("a decision stump on sv_total nails the sigma 0.1 corpus") {
    SynthConfig cfg;
    cfg.count = 2000;
    cfg.noise_sigma = 0.1;
    cfg.seed = 12;
    std::vector<FusedExample> ex = synth_generate(cfg);
    CHECK(stump_accuracy(ex, 3) >= 0.95);
}

TEST_CASE("synth determinism and seed sensitivity") {
    SynthConfig cfg;
    cfg.count = 50;
    cfg.seed = 77;
    std::vector<FusedExample> a = synth_generate(cfg);
    std::vector<FusedExample> b = synth_generate(cfg);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].label.value == b[i].label.value);
        CHECK(a[i].sensor == b[i].sensor);
        CHECK(a[i].cam1.pixels == b[i].cam1.pixels);
    }
    cfg.seed = 78;
    std::vector<FusedExample> c = synth_generate(cfg);
    bool any_difference = false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].label.value != c[i].label.value || a[i].sensor != c[i].sensor) {
            any_difference = true;
            break;
        }
    }
    CHECK(any_difference);
}

TEST_CASE("multi-sensor synth carries 12 channels with per-site magnitudes") {
    SynthConfig cfg;
    cfg.count = 40;
    cfg.sensor_width = 12;
    cfg.seed = 2;
    std::vector<FusedExample> ex = synth_generate(cfg);
    for (const FusedExample& e : ex) {
        REQUIRE(e.sensor.size() == 12);
        for (int site = 0; site < 3; ++site) {
            const double ax = e.sensor[static_cast<std::size_t>(4 * site)];
            const double ay = e.sensor[static_cast<std::size_t>(4 * site + 1)];
            const double az = e.sensor[static_cast<std::size_t>(4 * site + 2)];
            const double sv = e.sensor[static_cast<std::size_t>(4 * site + 3)];
            CHECK(sv == doctest::Approx(magnitude(ax, ay, az)).epsilon(1e-12));
        }
    }
}

TEST_CASE("cache round-trips exactly and writes identical bytes") {
    TempDir dir("cache");
    std::vector<FusedExample> ex = tiny_corpus(30, 0.4, 6);
    const std::string p1 = (dir.path / "a.bin").string();
    const std::string p2 = (dir.path / "b.bin").string();
    write_cache(p1, ex);
    write_cache(p2, ex);
    CHECK(read_bytes(p1) == read_bytes(p2));

    std::vector<FusedExample> back = read_cache(p1);
    REQUIRE(back.size() == ex.size());
    for (std::size_t i = 0; i < ex.size(); ++i) {
        CHECK(back[i].sensor == ex[i].sensor);
        CHECK(back[i].cam1.pixels == ex[i].cam1.pixels);
        CHECK(back[i].cam2.pixels == ex[i].cam2.pixels);
        CHECK(back[i].label.value == ex[i].label.value);
        CHECK(back[i].timestamp_ms == ex[i].timestamp_ms);
        CHECK(back[i].subject == ex[i].subject);
    }

    write_file(dir.path / "junk.bin", "NOT-A-CACHE-FILE");
    CHECK_THROWS_AS(read_cache((dir.path / "junk.bin").string()), DecodeError);
}

TEST_CASE("png round-trip and the full frame pipeline") {
    TempDir dir("png");
    ImageRgb img;
    img.height = 48;
    img.width = 64;
    img.pixels.resize(48 * 64 * 3);
    Rng rng(31);
    for (auto& b : img.pixels) b = static_cast<std::uint8_t>(rng.below(256));
    const std::string path = (dir.path / "frame.png").string();
    write_png_rgb(path, img);

    ImageRgb back = read_png_rgb(path);
    CHECK(back.height == 48);
    CHECK(back.width == 64);
    CHECK(back.pixels == img.pixels);

    FrameGray frame = load_frame_png(path, 1, 555);
    std::vector<double> gray = to_grayscale(img.pixels.data(), 48, 64);
    std::vector<double> expect = resize_bilinear(gray, 48, 64, kFrameSide, kFrameSide);
    CHECK(frame.pixels == expect);
    CHECK(frame.timestamp_ms == 555);

    write_file(dir.path / "fake.png", "definitely not a png");
    CHECK_THROWS_AS(read_png_rgb((dir.path / "fake.png").string()), DecodeError);
}

TEST_CASE("ingest plus align over a real directory corpus") {
    TempDir dir("end2end");
    // Frames every 50 ms on both cameras, gray gradient images.
    for (int cam = 1; cam <= 2; ++cam) {
        const fs::path d = dir.path / "S1" / "A1" / "T1" / ("cam" + std::to_string(cam));
        fs::create_directories(d);
        for (int i = 0; i < 12; ++i) {
            std::vector<double> gray(40 * 40, 0.1 + 0.05 * i);
            write_png_gray((d / (std::to_string(1000 + 50 * i) + ".png")).string(), gray, 40,
                           40);
        }
    }
    std::string csv = "timestamp,subject,activity,trial,wrist_ax,wrist_ay,wrist_az\n";
    for (int i = 0; i < 12; ++i) {
        csv += std::to_string(1005 + 50 * i) + ",1," + (i < 6 ? "1" : "6") + ",1,0.5,0.5,0.5\n";
    }
    write_file(dir.path / "sensor.csv", csv);

    CorpusLayout layout = test_layout(dir.str());
    IngestResult ingest = ingest_sensor_csv(layout, {1});
    FrameIndex cam1 = index_frames(layout, 1);
    FrameIndex cam2 = index_frames(layout, 2);
    AlignResult aligned =
        align(ingest.samples, cam1, cam2, 100, png_frame_loader(), layout.fall_set);
    CHECK(aligned.fused.size() == 12);
    CHECK(aligned.fused[0].label.value == 1);
    CHECK(aligned.fused[11].label.value == 0);
    for (const FusedExample& e : aligned.fused) {
        CHECK(e.cam1.pixels.size() == kFramePixels);
        CHECK(std::llabs(e.cam1.timestamp_ms - e.timestamp_ms) <= 100);
        CHECK(std::llabs(e.cam2.timestamp_ms - e.timestamp_ms) <= 100);
    }
}
