#pragma once

#include <cstdint>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "fallfuse/preprocess.hpp"

namespace fallfuse {

// One timestamped wrist-accelerometer reading. `extra` carries any further
// configured wearable channels, passed through untouched for the
// multi-sensor ablation.
struct SensorSample {
    std::int64_t timestamp_ms = 0;
    double ax = 0.0;
    double ay = 0.0;
    double az = 0.0;
    double sv_total = 0.0;
    int activity_id = 0;
    int subject = 0;
    int trial = 0;
    std::vector<double> extra;
};

// Where a corpus lives and how its CSV columns are named. The frame
// pattern is resolved against root with {subject}/{activity}/{trial}/
// {camera} placeholders; frames are named <timestamp_ms>.png.
struct CorpusLayout {
    std::string root;
    std::string sensor_csv = "sensor.csv";
    std::string frame_pattern = "S{subject}/A{activity}/T{trial}/cam{camera}";
    std::string col_timestamp = "timestamp";
    std::string col_ax = "wrist_ax";
    std::string col_ay = "wrist_ay";
    std::string col_az = "wrist_az";
    std::string col_activity = "activity";
    std::string col_subject = "subject";  // empty: no subject filtering
    std::string col_trial = "trial";      // empty: trial 0
    std::vector<std::string> extra_columns;
    std::set<int> fall_set{1, 2, 3, 4, 5};
    std::vector<int> subjects{1, 2, 3};
    int alignment_tolerance_ms = 100;
};

// One aligned training record. The sensor vector holds raw physical values
// [ax, ay, az, sv_total, extra...]; standardization happens at batch
// assembly with statistics fitted on the training split.
struct FusedExample {
    std::vector<double> sensor;
    FrameGray cam1;
    FrameGray cam2;
    BinaryLabel label;
    std::int64_t timestamp_ms = 0;
    int subject = 0;
    int trial = 0;
};

struct IngestResult {
    std::vector<SensorSample> samples;
    std::int64_t dropped = 0;  // rows with unparseable numerics
    std::vector<std::string> warnings;
};

// Reads the sensor CSV, keeping only the requested subjects and the
// configured wrist-accelerometer columns; sv_total is recomputed from the
// axes, never read from the file.
IngestResult ingest_sensor_csv(const CorpusLayout& layout, const std::set<int>& subjects);

struct FrameEntry {
    std::int64_t timestamp_ms = 0;
    std::string path;
};

struct FrameIndex {
    int camera = 1;
    std::vector<FrameEntry> entries;  // strictly sorted by timestamp
    int skipped = 0;                  // unparseable filenames
    int duplicates = 0;               // same timestamp, first kept
    std::vector<std::string> warnings;
};

FrameIndex index_frames(const CorpusLayout& layout, int camera);

// Maps a frame entry to its preprocessed 32x32 grayscale pixels. The
// default loader decodes PNG from disk; tests substitute synthetic ones.
using FrameLoader = std::function<FrameGray(const FrameEntry&, int camera)>;

FrameLoader png_frame_loader();

struct AlignResult {
    std::vector<FusedExample> fused;
    std::int64_t unmatched = 0;
    std::vector<std::string> warnings;
};

// Nearest frame per camera by |dt|; a sample is emitted only when both
// cameras match within the tolerance. Output preserves sensor timestamp
// order. Equidistant neighbours resolve to the earlier frame.
AlignResult align(const std::vector<SensorSample>& samples, const FrameIndex& cam1,
                  const FrameIndex& cam2, int tolerance_ms, const FrameLoader& loader,
                  const std::set<int>& fall_set);

struct SplitSpec {
    double train = 0.6;
    double val = 0.2;
    double test = 0.2;
    std::uint64_t seed = 7;

    void validate() const;  // fractions positive, sum to 1 within 1e-9
};

struct Splits {
    std::vector<FusedExample> train;
    std::vector<FusedExample> val;
    std::vector<FusedExample> test;
    std::vector<std::string> warnings;
};

// Label-stratified shuffled split; deterministic per seed; the three parts
// partition the input.
Splits split(const std::vector<FusedExample>& examples, const SplitSpec& spec);

// Desk-scale synthetic corpus. Falls carry a high-magnitude acceleration
// spike and a wide, low silhouette blob on both cameras; daily activities
// sit near 1 g with a tall, narrow blob. The generator fixes the labels by
// construction, so it doubles as the oracle for learnability tests.
struct SynthConfig {
    int count = 2000;
    double prevalence = 0.3;
    double noise_sigma = 0.1;
    double spike_g = 3.0;
    double base_g = 1.0;
    int sensor_width = 4;  // 4 = wrist only; 12 = three synthetic sites
    int fall_blob_w = 18;
    int fall_blob_h = 6;
    int nofall_blob_w = 6;
    int nofall_blob_h = 18;
    double blob_intensity = 0.8;
    double background = 0.1;
    std::uint64_t seed = 1;

    void validate() const;
};

std::vector<FusedExample> synth_generate(const SynthConfig& config);

// Binary cache of preprocessed fused examples, magic "FALLFUSE-DATA-1".
// Byte layout (little-endian): magic[16] "FALLFUSE-DATA-1\n", u32 sensor
// width, u64 count, then per record: i64 timestamp_ms, i32 subject,
// i32 trial, u8 label, f64 sensor[width], f64 cam1[1024], f64 cam2[1024].
void write_cache(const std::string& path, const std::vector<FusedExample>& examples);
std::vector<FusedExample> read_cache(const std::string& path);

}  // namespace fallfuse
