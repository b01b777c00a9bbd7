#include "fallfuse/commands.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "fallfuse/checkpoint.hpp"
#include "fallfuse/error.hpp"
#include "fallfuse/metrics.hpp"

namespace fs = std::filesystem;

namespace fallfuse {

std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

namespace {

std::string fixed6(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory " + dir + ": " + ec.message());
}

double label_mean(const std::vector<FusedExample>& examples) {
    double sum = 0.0;
    for (const FusedExample& e : examples) sum += e.label.value;
    return examples.empty() ? 0.0 : sum / static_cast<double>(examples.size());
}

}  // namespace

std::vector<FusedExample> resolve_corpus(const Config& cfg,
                                         std::optional<std::uint64_t> seed_override) {
    const std::string source = cfg.get("corpus.source", "synth");
    if (source == "synth") {
        SynthConfig synth = synth_from_config(cfg);
        if (seed_override) synth.seed = *seed_override;
        return synth_generate(synth);
    }
    if (source == "cache") {
        return read_cache(cfg.get("corpus.cache"));
    }
    if (source == "real") {
        const CorpusLayout layout = layout_from_config(cfg);
        std::set<int> subjects(layout.subjects.begin(), layout.subjects.end());
        IngestResult ingest = ingest_sensor_csv(layout, subjects);
        for (const std::string& w : ingest.warnings) std::cerr << "warning: " << w << "\n";
        if (ingest.dropped > 0) {
            std::cerr << "dropped " << ingest.dropped << " unparseable sensor rows\n";
        }
        FrameIndex idx1 = index_frames(layout, 1);
        FrameIndex idx2 = index_frames(layout, 2);
        AlignResult aligned = align(ingest.samples, idx1, idx2, layout.alignment_tolerance_ms,
                                    png_frame_loader(), layout.fall_set);
        if (aligned.unmatched > 0) {
            std::cerr << aligned.unmatched << " sensor samples had no frame within "
                      << layout.alignment_tolerance_ms << " ms\n";
        }
        if (aligned.fused.empty()) throw CorpusError("alignment produced no fused examples");
        return std::move(aligned.fused);
    }
    throw ConfigError("corpus.source must be synth, cache or real, got " + source);
}

std::string cmd_synth(const Config& cfg, const std::string& out_dir,
                      std::optional<std::uint64_t> seed_override) {
    ensure_dir(out_dir);
    SynthConfig synth = synth_from_config(cfg);
    if (seed_override) synth.seed = *seed_override;
    std::vector<FusedExample> examples = synth_generate(synth);
    const std::string path = cfg.get("corpus.cache", out_dir + "/synth.bin");
    if (const auto parent = fs::path(path).parent_path(); !parent.empty()) {
        ensure_dir(parent.string());
    }
    write_cache(path, examples);
    std::cout << "wrote " << examples.size() << " examples to " << path
              << " (prevalence " << fixed6(label_mean(examples)) << ", sensor width "
              << synth.sensor_width << ", seed " << synth.seed << ")\n";
    return path;
}

namespace {

void write_epochs_csv(const std::string& path, const std::vector<EpochLog>& logs) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot create " + path);
    out << "epoch,train_loss,val_accuracy,val_f1,seconds\n";
    for (const EpochLog& log : logs) {
        char secs[32];
        std::snprintf(secs, sizeof(secs), "%.3f", log.seconds);
        out << log.epoch << ',' << format_double(log.train_loss) << ','
            << format_double(log.val_accuracy) << ',' << format_double(log.val_f1) << ','
            << secs << '\n';
    }
    if (!out) throw IoError("write failed: " + path);
}

int multi_sensor_width(const Config& cfg) {
    return cfg.get_int("model.multi_sensor_width", 12);
}

}  // namespace

std::vector<std::string> cmd_train(const Config& cfg, const std::string& out_dir,
                                   std::optional<std::uint64_t> seed_override) {
    ensure_dir(out_dir);
    const std::vector<FusedExample> corpus = resolve_corpus(cfg, std::nullopt);
    const Splits splits = split(corpus, split_from_config(cfg));
    for (const std::string& w : splits.warnings) std::cerr << "warning: " << w << "\n";

    TrainConfig train_cfg = train_from_config(cfg);
    if (seed_override) train_cfg.seed = *seed_override;
    const ModelProfile profile = profile_from_config(cfg);

    std::vector<std::string> names = cfg.get_list("model.variants");
    if (names.empty()) names = {"Fusion"};

    std::vector<std::string> trained;
    for (const std::string& name : names) {
        const Variant variant = variant_from_name(name);
        const int width = variant == Variant::MultiSensorFusion
                              ? multi_sensor_width(cfg)
                              : cfg.get_int("model.sensor_width", 4);
        Model model = Model::build(ModelSpec::make(variant, profile, width), train_cfg.seed);
        std::vector<EpochLog> logs;
        try {
            logs = train_model(model, splits.train, splits.val, train_cfg);
        } catch (const DivergenceError& e) {
            throw DivergenceError(name + ": " + e.what());
        }
        const std::string ckpt = out_dir + "/" + name + ".ckpt";
        const std::string csv = out_dir + "/" + name + "_epochs.csv";
        save_checkpoint(ckpt, model);
        write_epochs_csv(csv, logs);
        const EpochLog& last = logs.back();
        std::cout << name << ": " << logs.size() << " epochs, final loss "
                  << format_double(last.train_loss) << ", val acc "
                  << fixed6(last.val_accuracy) << ", val f1 " << fixed6(last.val_f1) << "\n";
        trained.push_back(name);
    }
    return trained;
}

std::string cmd_eval(const Config& cfg, const std::string& out_dir,
                     std::optional<std::uint64_t> seed_override) {
    ensure_dir(out_dir);
    const std::vector<FusedExample> corpus = resolve_corpus(cfg, seed_override);
    const Splits splits = split(corpus, split_from_config(cfg));

    const std::vector<std::string> checkpoints = cfg.get_list("eval.checkpoints");
    if (checkpoints.empty()) throw ConfigError("eval.checkpoints lists no checkpoint files");

    std::vector<BinaryLabel> truths;
    truths.reserve(splits.test.size());
    for (const FusedExample& e : splits.test) truths.push_back(e.label);

    const std::string path = out_dir + "/" + cfg.get("eval.out", "metrics.csv");
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot create " + path);
    out << "variant,split,averaging,accuracy,precision,recall,f1\n";
    for (const std::string& ckpt : checkpoints) {
        Model model = load_checkpoint(ckpt);
        const std::vector<BinaryLabel> preds = evaluate(model, splits.test);
        const ConfusionCounts counts = confusion(preds, truths);
        for (Averaging mode :
             {Averaging::PerClassPositive, Averaging::Micro, Averaging::Weighted}) {
            const MetricsReport r = metrics(counts, mode);
            out << variant_name(model.spec().variant) << ",test," << averaging_name(mode)
                << ',' << fixed6(r.accuracy) << ',' << fixed6(r.precision) << ','
                << fixed6(r.recall) << ',' << fixed6(r.f1) << '\n';
        }
        std::cout << variant_name(model.spec().variant) << ": test accuracy "
                  << fixed6(metrics(counts, Averaging::PerClassPositive).accuracy) << " on "
                  << splits.test.size() << " examples\n";
    }
    if (!out) throw IoError("write failed: " + path);
    return path;
}

namespace {

struct CurveRow {
    std::string variant;
    long epoch;
    std::string metric;
    std::string value;  // verbatim from the input file
};

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    std::istringstream ss(line);
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    return fields;
}

}  // namespace

std::string cmd_curves(const Config& cfg, const std::string& out_dir) {
    ensure_dir(out_dir);
    const std::vector<std::string> inputs = cfg.get_list("curves.inputs");
    if (inputs.empty()) throw ConfigError("curves.inputs lists no epoch CSV files");
    std::vector<std::string> wanted = cfg.get_list("curves.metrics");
    if (wanted.empty()) wanted = {"val_accuracy", "val_f1"};

    std::vector<CurveRow> rows;
    for (const std::string& input : inputs) {
        std::ifstream in(input);
        if (!in) throw ConfigError("cannot open curves input: " + input);
        std::string variant = fs::path(input).stem().string();
        if (const auto pos = variant.rfind("_epochs"); pos != std::string::npos &&
            pos + 7 == variant.size()) {
            variant = variant.substr(0, pos);
        }

        std::string line;
        if (!std::getline(in, line)) throw ConfigError(input + ":1: empty curves input");
        const std::vector<std::string> header = split_line(line);
        std::size_t epoch_col = header.size();
        std::vector<std::pair<std::string, std::size_t>> metric_cols;
        for (std::size_t i = 0; i < header.size(); ++i) {
            if (header[i] == "epoch") epoch_col = i;
        }
        if (epoch_col == header.size()) {
            throw ConfigError(input + ":1: no `epoch` column");
        }
        for (const std::string& m : wanted) {
            bool found = false;
            for (std::size_t i = 0; i < header.size(); ++i) {
                if (header[i] == m) {
                    metric_cols.emplace_back(m, i);
                    found = true;
                }
            }
            if (!found) throw ConfigError(input + ":1: no `" + m + "` column");
        }

        int line_no = 1;
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty()) continue;
            const std::vector<std::string> fields = split_line(line);
            if (fields.size() != header.size()) {
                throw ConfigError(input + ":" + std::to_string(line_no) +
                                  ": expected " + std::to_string(header.size()) + " fields");
            }
            long epoch = 0;
            auto [ptr, ec] = std::from_chars(fields[epoch_col].data(),
                                             fields[epoch_col].data() + fields[epoch_col].size(),
                                             epoch);
            if (ec != std::errc() ||
                ptr != fields[epoch_col].data() + fields[epoch_col].size()) {
                throw ConfigError(input + ":" + std::to_string(line_no) +
                                  ": bad epoch value: " + fields[epoch_col]);
            }
            for (const auto& [metric, col] : metric_cols) {
                rows.push_back({variant, epoch, metric, fields[col]});
            }
        }
    }

    std::stable_sort(rows.begin(), rows.end(), [](const CurveRow& a, const CurveRow& b) {
        if (a.variant != b.variant) return a.variant < b.variant;
        return a.epoch < b.epoch;
    });

    const std::string path = out_dir + "/" + cfg.get("curves.out", "curves.csv");
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot create " + path);
    out << "variant,epoch,metric,value\n";
    for (const CurveRow& r : rows) {
        out << r.variant << ',' << r.epoch << ',' << r.metric << ',' << r.value << '\n';
    }
    if (!out) throw IoError("write failed: " + path);
    std::cout << "wrote " << rows.size() << " curve rows to " << path << "\n";
    return path;
}

}  // namespace fallfuse
