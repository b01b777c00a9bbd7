#include "fallfuse/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>

#include "fallfuse/error.hpp"
#include "fallfuse/image_io.hpp"
#include "fallfuse/rng.hpp"

namespace fs = std::filesystem;

namespace fallfuse {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    std::istringstream ss(line);
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    return fields;
}

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

bool parse_double(const std::string& s, double& out) {
    const std::string t = trim(s);
    if (t.empty()) return false;
    const char* begin = t.data();
    const char* end = begin + t.size();
    auto [ptr, ec] = std::from_chars(begin, end, out);
    if (ec != std::errc() || ptr != end) return false;
    return std::isfinite(out);
}

bool parse_int64(const std::string& s, std::int64_t& out) {
    const std::string t = trim(s);
    if (t.empty()) return false;
    const char* begin = t.data();
    const char* end = begin + t.size();
    auto [ptr, ec] = std::from_chars(begin, end, out);
    return ec == std::errc() && ptr == end;
}

bool parse_int(const std::string& s, int& out) {
    std::int64_t v = 0;
    if (!parse_int64(s, v)) return false;
    out = static_cast<int>(v);
    return true;
}

std::size_t require_column(const std::vector<std::string>& header, const std::string& name,
                           const std::string& file) {
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (trim(header[i]) == name) return i;
    }
    throw SchemaError("column '" + name + "' missing from " + file);
}

}  // namespace

IngestResult ingest_sensor_csv(const CorpusLayout& layout, const std::set<int>& subjects) {
    const fs::path csv_path = fs::path(layout.root) / layout.sensor_csv;
    std::ifstream in(csv_path);
    if (!in) throw IoError("cannot open sensor CSV: " + csv_path.string());

    std::string line;
    if (!std::getline(in, line)) throw CorpusError("sensor CSV is empty: " + csv_path.string());
    const std::vector<std::string> header = split_csv_line(line);
    const std::string file = csv_path.string();

    const std::size_t ts_col = require_column(header, layout.col_timestamp, file);
    const std::size_t ax_col = require_column(header, layout.col_ax, file);
    const std::size_t ay_col = require_column(header, layout.col_ay, file);
    const std::size_t az_col = require_column(header, layout.col_az, file);
    const std::size_t act_col = require_column(header, layout.col_activity, file);
    const bool have_subject = !layout.col_subject.empty();
    const bool have_trial = !layout.col_trial.empty();
    const std::size_t subj_col =
        have_subject ? require_column(header, layout.col_subject, file) : 0;
    const std::size_t trial_col = have_trial ? require_column(header, layout.col_trial, file) : 0;
    std::vector<std::size_t> extra_cols;
    for (const std::string& name : layout.extra_columns) {
        extra_cols.push_back(require_column(header, name, file));
    }

    IngestResult result;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        const std::vector<std::string> fields = split_csv_line(line);
        std::size_t needed = std::max({ts_col, ax_col, ay_col, az_col, act_col});
        if (have_subject) needed = std::max(needed, subj_col);
        if (have_trial) needed = std::max(needed, trial_col);
        for (std::size_t c : extra_cols) needed = std::max(needed, c);
        if (fields.size() <= needed) {
            ++result.dropped;
            continue;
        }
        SensorSample s;
        double ax = 0, ay = 0, az = 0;
        int activity = 0;
        if (!parse_int64(fields[ts_col], s.timestamp_ms) || !parse_double(fields[ax_col], ax) ||
            !parse_double(fields[ay_col], ay) || !parse_double(fields[az_col], az) ||
            !parse_int(fields[act_col], activity)) {
            ++result.dropped;
            continue;
        }
        if (have_subject && !parse_int(fields[subj_col], s.subject)) {
            ++result.dropped;
            continue;
        }
        if (have_trial && !parse_int(fields[trial_col], s.trial)) {
            ++result.dropped;
            continue;
        }
        bool extra_ok = true;
        s.extra.reserve(extra_cols.size());
        for (std::size_t c : extra_cols) {
            double v = 0;
            if (!parse_double(fields[c], v)) {
                extra_ok = false;
                break;
            }
            s.extra.push_back(v);
        }
        if (!extra_ok) {
            ++result.dropped;
            continue;
        }
        if (have_subject && !subjects.empty() && subjects.count(s.subject) == 0) continue;
        s.ax = ax;
        s.ay = ay;
        s.az = az;
        s.sv_total = magnitude(ax, ay, az);
        s.activity_id = activity;
        result.samples.push_back(std::move(s));
    }
    if (result.samples.empty()) {
        throw CorpusError("no sensor rows for requested subjects in " + file);
    }
    return result;
}

FrameIndex index_frames(const CorpusLayout& layout, int camera) {
    if (camera != 1 && camera != 2) throw InputError("camera must be 1 or 2");

    // The directory pattern becomes a regex over the path relative to root.
    std::string pattern;
    for (char ch : layout.frame_pattern) {
        if (std::strchr(".^$|()[]{}*+?\\", ch)) pattern += '\\';
        pattern += ch;
    }
    auto replace_all = [&pattern](const std::string& from, const std::string& to) {
        std::size_t pos = 0;
        while ((pos = pattern.find(from, pos)) != std::string::npos) {
            pattern.replace(pos, from.size(), to);
            pos += to.size();
        }
    };
    replace_all("\\{subject\\}", "(\\d+)");
    replace_all("\\{activity\\}", "\\d+");
    replace_all("\\{trial\\}", "\\d+");
    replace_all("\\{camera\\}", std::to_string(camera));
    const std::regex dir_re(pattern);

    FrameIndex index;
    index.camera = camera;
    const fs::path root(layout.root);
    if (!fs::exists(root)) throw CorpusError("corpus root does not exist: " + layout.root);

    std::set<int> wanted(layout.subjects.begin(), layout.subjects.end());
    for (const auto& entry : fs::recursive_directory_iterator(root)) {
        if (!entry.is_directory()) continue;
        const std::string rel = fs::relative(entry.path(), root).generic_string();
        std::smatch match;
        if (!std::regex_match(rel, match, dir_re)) continue;
        if (match.size() > 1 && !wanted.empty()) {
            const int subject = std::stoi(match[1].str());
            if (wanted.count(subject) == 0) continue;
        }
        for (const auto& file : fs::directory_iterator(entry.path())) {
            if (!file.is_regular_file() || file.path().extension() != ".png") continue;
            std::int64_t ts = 0;
            if (!parse_int64(file.path().stem().string(), ts)) {
                ++index.skipped;
                index.warnings.push_back("unparseable frame name skipped: " +
                                         file.path().string());
                continue;
            }
            index.entries.push_back({ts, file.path().string()});
        }
    }

    std::sort(index.entries.begin(), index.entries.end(), [](const auto& a, const auto& b) {
        return a.timestamp_ms != b.timestamp_ms ? a.timestamp_ms < b.timestamp_ms
                                                : a.path < b.path;
    });
    std::vector<FrameEntry> unique;
    unique.reserve(index.entries.size());
    for (auto& e : index.entries) {
        if (!unique.empty() && unique.back().timestamp_ms == e.timestamp_ms) {
            ++index.duplicates;
            index.warnings.push_back("duplicate frame timestamp " +
                                     std::to_string(e.timestamp_ms) + ", kept first");
            continue;
        }
        unique.push_back(std::move(e));
    }
    index.entries = std::move(unique);
    if (index.entries.empty()) {
        throw CorpusError("no frames found for camera " + std::to_string(camera) + " under " +
                          layout.root);
    }
    return index;
}

FrameLoader png_frame_loader() {
    return [](const FrameEntry& entry, int camera) {
        return load_frame_png(entry.path, camera, entry.timestamp_ms);
    };
}

namespace {

// Index of the entry nearest to ts; equidistant neighbours resolve to the
// earlier one.
std::size_t nearest_entry(const std::vector<FrameEntry>& entries, std::int64_t ts) {
    auto it = std::lower_bound(entries.begin(), entries.end(), ts,
                               [](const FrameEntry& e, std::int64_t t) {
                                   return e.timestamp_ms < t;
                               });
    if (it == entries.begin()) return 0;
    if (it == entries.end()) return entries.size() - 1;
    const auto after = static_cast<std::size_t>(it - entries.begin());
    const auto before = after - 1;
    const std::int64_t d_before = ts - entries[before].timestamp_ms;
    const std::int64_t d_after = entries[after].timestamp_ms - ts;
    return d_before <= d_after ? before : after;
}

}  // namespace

AlignResult align(const std::vector<SensorSample>& samples, const FrameIndex& cam1,
                  const FrameIndex& cam2, int tolerance_ms, const FrameLoader& loader,
                  const std::set<int>& fall_set) {
    if (cam1.entries.empty() || cam2.entries.empty()) {
        throw CorpusError("align: empty frame index");
    }
    AlignResult result;
    for (const SensorSample& s : samples) {
        const std::size_t i1 = nearest_entry(cam1.entries, s.timestamp_ms);
        const std::size_t i2 = nearest_entry(cam2.entries, s.timestamp_ms);
        const std::int64_t d1 = std::llabs(cam1.entries[i1].timestamp_ms - s.timestamp_ms);
        const std::int64_t d2 = std::llabs(cam2.entries[i2].timestamp_ms - s.timestamp_ms);
        if (d1 > tolerance_ms || d2 > tolerance_ms) {
            ++result.unmatched;
            continue;
        }
        FusedExample ex;
        ex.sensor = {s.ax, s.ay, s.az, s.sv_total};
        ex.sensor.insert(ex.sensor.end(), s.extra.begin(), s.extra.end());
        ex.cam1 = loader(cam1.entries[i1], 1);
        ex.cam2 = loader(cam2.entries[i2], 2);
        ex.label = binarize_label(s.activity_id, fall_set, &result.warnings);
        ex.timestamp_ms = s.timestamp_ms;
        ex.subject = s.subject;
        ex.trial = s.trial;
        result.fused.push_back(std::move(ex));
    }
    return result;
}

void SplitSpec::validate() const {
    if (train <= 0.0 || val <= 0.0 || test <= 0.0) {
        throw ConfigError("split fractions must be positive");
    }
    if (std::abs(train + val + test - 1.0) > 1e-9) {
        throw ConfigError("split fractions must sum to 1");
    }
}

Splits split(const std::vector<FusedExample>& examples, const SplitSpec& spec) {
    spec.validate();
    if (examples.size() < 10) {
        throw InputError("split requires >= 10 examples, got " +
                         std::to_string(examples.size()));
    }

    std::vector<std::size_t> by_class[2];
    for (std::size_t i = 0; i < examples.size(); ++i) {
        by_class[examples[i].label.value ? 1 : 0].push_back(i);
    }

    Rng rng(spec.seed);
    const double fractions[3] = {spec.train, spec.val, spec.test};
    std::vector<std::size_t> assigned[3];

    for (auto& cls : by_class) {
        if (cls.empty()) continue;
        rng.shuffle(cls);
        const std::size_t m = cls.size();
        std::size_t counts[3];
        double remainders[3];
        std::size_t used = 0;
        for (int s = 0; s < 3; ++s) {
            const double target = fractions[s] * static_cast<double>(m);
            counts[s] = static_cast<std::size_t>(target);
            remainders[s] = target - static_cast<double>(counts[s]);
            used += counts[s];
        }
        while (used < m) {  // largest remainder, ties toward train/val/test order
            int best = 0;
            for (int s = 1; s < 3; ++s) {
                if (remainders[s] > remainders[best]) best = s;
            }
            ++counts[best];
            remainders[best] = -1.0;
            ++used;
        }
        std::size_t offset = 0;
        for (int s = 0; s < 3; ++s) {
            for (std::size_t i = 0; i < counts[s]; ++i) {
                assigned[s].push_back(cls[offset + i]);
            }
            offset += counts[s];
        }
    }

    Splits out;
    const char* names[3] = {"train", "val", "test"};
    std::vector<FusedExample>* dests[3] = {&out.train, &out.val, &out.test};
    for (int s = 0; s < 3; ++s) {
        rng.shuffle(assigned[s]);  // mix classes within the split
        dests[s]->reserve(assigned[s].size());
        for (std::size_t idx : assigned[s]) dests[s]->push_back(examples[idx]);
        std::size_t positives = 0;
        for (const FusedExample& e : *dests[s]) positives += e.label.value;
        if (!dests[s]->empty() && (positives == 0 || positives == dests[s]->size())) {
            out.warnings.push_back(std::string(names[s]) + " split holds a single class");
        }
    }
    return out;
}

void SynthConfig::validate() const {
    if (count < 1) throw ConfigError("synth count must be >= 1");
    if (!(prevalence > 0.0 && prevalence < 1.0)) {
        throw ConfigError("synth prevalence must be in (0,1)");
    }
    if (noise_sigma < 0.0) throw ConfigError("synth noise sigma must be >= 0");
    if (sensor_width < 4 || sensor_width % 4 != 0) {
        throw ConfigError("synth sensor width must be a positive multiple of 4");
    }
    if (fall_blob_w < 1 || fall_blob_h < 1 || nofall_blob_w < 1 || nofall_blob_h < 1 ||
        fall_blob_w > kFrameSide || fall_blob_h > kFrameSide || nofall_blob_w > kFrameSide ||
        nofall_blob_h > kFrameSide) {
        throw ConfigError("synth blob geometry outside the 32x32 frame");
    }
}

namespace {

std::vector<double> synth_frame(Rng& rng, bool fall, const SynthConfig& cfg) {
    std::vector<double> px(kFramePixels, cfg.background);
    const int bw = fall ? cfg.fall_blob_w : cfg.nofall_blob_w;
    const int bh = fall ? cfg.fall_blob_h : cfg.nofall_blob_h;
    const int cx = kFrameSide / 2 + static_cast<int>(rng.uniform(-3.0, 3.0));
    const int cy = kFrameSide / 2 + static_cast<int>(rng.uniform(-3.0, 3.0));
    const int x0 = std::clamp(cx - bw / 2, 0, kFrameSide - 1);
    const int x1 = std::clamp(cx + bw / 2, 0, kFrameSide - 1);
    const int y0 = std::clamp(cy - bh / 2, 0, kFrameSide - 1);
    const int y1 = std::clamp(cy + bh / 2, 0, kFrameSide - 1);
    for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) px[static_cast<std::size_t>(y) * kFrameSide + x] = cfg.blob_intensity;
    }
    for (double& v : px) {
        v = std::clamp(v + rng.normal(0.0, cfg.noise_sigma), 0.0, 1.0);
    }
    return px;
}

}  // namespace

std::vector<FusedExample> synth_generate(const SynthConfig& config) {
    config.validate();
    Rng rng(config.seed);
    const int sites = config.sensor_width / 4;
    std::vector<FusedExample> out;
    out.reserve(static_cast<std::size_t>(config.count));
    for (int i = 0; i < config.count; ++i) {
        const bool fall = rng.bernoulli(config.prevalence);
        const double target = fall ? config.spike_g : config.base_g;

        // Shared motion direction; each site sees it through its own gain.
        double dx = rng.normal(), dy = rng.normal(), dz = rng.normal();
        const double norm = std::max(std::sqrt(dx * dx + dy * dy + dz * dz), 1e-9);
        dx /= norm;
        dy /= norm;
        dz /= norm;

        FusedExample ex;
        ex.sensor.reserve(static_cast<std::size_t>(config.sensor_width));
        for (int s = 0; s < sites; ++s) {
            static constexpr double kSiteGain[3] = {1.0, 0.8, 1.2};
            const double gain = kSiteGain[s % 3];
            const double ax = dx * target * gain + rng.normal(0.0, config.noise_sigma);
            const double ay = dy * target * gain + rng.normal(0.0, config.noise_sigma);
            const double az = dz * target * gain + rng.normal(0.0, config.noise_sigma);
            ex.sensor.push_back(ax);
            ex.sensor.push_back(ay);
            ex.sensor.push_back(az);
            ex.sensor.push_back(magnitude(ax, ay, az));
        }

        const std::int64_t ts = 1000 + 50LL * i;
        ex.cam1 = FrameGray{synth_frame(rng, fall, config), 1, ts};
        ex.cam2 = FrameGray{synth_frame(rng, fall, config), 2, ts};
        ex.label = BinaryLabel{static_cast<std::uint8_t>(fall ? 1 : 0)};
        ex.timestamp_ms = ts;
        ex.subject = 1 + i % 3;
        ex.trial = 1 + i % 3;
        out.push_back(std::move(ex));
    }
    return out;
}

namespace {

constexpr char kDataMagic[17] = "FALLFUSE-DATA-1\n";  // 16 bytes + NUL

template <typename T>
void write_raw(std::ofstream& out, T value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_raw(std::ifstream& in, const std::string& path) {
    T value{};
    if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) {
        throw IoError("truncated cache file: " + path);
    }
    return value;
}

}  // namespace

void write_cache(const std::string& path, const std::vector<FusedExample>& examples) {
    if (examples.empty()) throw InputError("refusing to write an empty cache");
    const auto width = static_cast<std::uint32_t>(examples.front().sensor.size());
    for (const FusedExample& e : examples) {
        if (e.sensor.size() != width || e.cam1.pixels.size() != kFramePixels ||
            e.cam2.pixels.size() != kFramePixels) {
            throw InputError("inconsistent example while writing cache");
        }
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot create cache file: " + path);
    out.write(kDataMagic, 16);
    write_raw(out, width);
    write_raw(out, static_cast<std::uint64_t>(examples.size()));
    for (const FusedExample& e : examples) {
        write_raw(out, e.timestamp_ms);
        write_raw(out, static_cast<std::int32_t>(e.subject));
        write_raw(out, static_cast<std::int32_t>(e.trial));
        write_raw(out, e.label.value);
        out.write(reinterpret_cast<const char*>(e.sensor.data()),
                  static_cast<std::streamsize>(sizeof(double) * width));
        out.write(reinterpret_cast<const char*>(e.cam1.pixels.data()),
                  sizeof(double) * kFramePixels);
        out.write(reinterpret_cast<const char*>(e.cam2.pixels.data()),
                  sizeof(double) * kFramePixels);
    }
    if (!out) throw IoError("write failed: " + path);
}

std::vector<FusedExample> read_cache(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open cache file: " + path);
    char magic[16];
    if (!in.read(magic, 16) || std::memcmp(magic, kDataMagic, 16) != 0) {
        throw DecodeError("not a FALLFUSE-DATA-1 cache: " + path);
    }
    const auto width = read_raw<std::uint32_t>(in, path);
    const auto count = read_raw<std::uint64_t>(in, path);
    if (width < 4 || width % 4 != 0) throw DecodeError("corrupt cache sensor width");
    std::vector<FusedExample> out;
    out.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        FusedExample e;
        e.timestamp_ms = read_raw<std::int64_t>(in, path);
        e.subject = read_raw<std::int32_t>(in, path);
        e.trial = read_raw<std::int32_t>(in, path);
        e.label.value = read_raw<std::uint8_t>(in, path);
        e.sensor.resize(width);
        e.cam1.pixels.resize(kFramePixels);
        e.cam2.pixels.resize(kFramePixels);
        if (!in.read(reinterpret_cast<char*>(e.sensor.data()), sizeof(double) * width) ||
            !in.read(reinterpret_cast<char*>(e.cam1.pixels.data()),
                     sizeof(double) * kFramePixels) ||
            !in.read(reinterpret_cast<char*>(e.cam2.pixels.data()),
                     sizeof(double) * kFramePixels)) {
            throw IoError("truncated cache file: " + path);
        }
        for (double v : e.sensor) {
            if (!std::isfinite(v)) throw DecodeError("non-finite sensor value in cache: " + path);
        }
        e.cam1.source_camera = 1;
        e.cam2.source_camera = 2;
        e.cam1.timestamp_ms = e.timestamp_ms;
        e.cam2.timestamp_ms = e.timestamp_ms;
        out.push_back(std::move(e));
    }
    return out;
}

}  // namespace fallfuse
