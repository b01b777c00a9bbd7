#include "fallfuse/config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "fallfuse/error.hpp"

namespace fallfuse {

namespace {

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

}  // namespace

Config Config::parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_string(ss.str(), path);
}

Config Config::parse_string(const std::string& text, const std::string& origin) {
    Config cfg;
    cfg.origin_ = origin;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(origin + ":" + std::to_string(line_no) +
                              ": expected `key = value`, got: " + line);
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) {
            throw ConfigError(origin + ":" + std::to_string(line_no) + ": empty key");
        }
        cfg.entries_[key] = value;
    }
    return cfg;
}

bool Config::has(const std::string& key) const { return entries_.count(key) != 0; }

std::string Config::get(const std::string& key) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) {
        throw ConfigError("missing config key '" + key + "' in " + origin_);
    }
    return it->second;
}

std::string Config::get(const std::string& key, const std::string& fallback) const {
    auto it = entries_.find(key);
    return it == entries_.end() ? fallback : it->second;
}

int Config::get_int(const std::string& key, int fallback) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    int v = 0;
    auto [ptr, ec] = std::from_chars(it->second.data(), it->second.data() + it->second.size(), v);
    if (ec != std::errc() || ptr != it->second.data() + it->second.size()) {
        throw ConfigError("config key '" + key + "' is not an integer: " + it->second);
    }
    return v;
}

double Config::get_double(const std::string& key, double fallback) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    char* end = nullptr;
    const double v = std::strtod(it->second.c_str(), &end);
    if (end != it->second.c_str() + it->second.size() || it->second.empty()) {
        throw ConfigError("config key '" + key + "' is not a number: " + it->second);
    }
    return v;
}

bool Config::get_bool(const std::string& key, bool fallback) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    if (it->second == "true" || it->second == "1") return true;
    if (it->second == "false" || it->second == "0") return false;
    throw ConfigError("config key '" + key + "' is not a bool: " + it->second);
}

std::uint64_t Config::get_u64(const std::string& key, std::uint64_t fallback) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    std::uint64_t v = 0;
    auto [ptr, ec] = std::from_chars(it->second.data(), it->second.data() + it->second.size(), v);
    if (ec != std::errc() || ptr != it->second.data() + it->second.size()) {
        throw ConfigError("config key '" + key + "' is not a u64: " + it->second);
    }
    return v;
}

std::vector<std::string> Config::get_list(const std::string& key) const {
    std::vector<std::string> out;
    auto it = entries_.find(key);
    if (it == entries_.end()) return out;
    std::istringstream ss(it->second);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

std::set<int> Config::get_int_set(const std::string& key) const {
    std::set<int> out;
    for (const std::string& item : get_list(key)) {
        try {
            out.insert(std::stoi(item));
        } catch (const std::exception&) {
            throw ConfigError("config key '" + key + "' has a non-integer entry: " + item);
        }
    }
    return out;
}

SynthConfig synth_from_config(const Config& cfg) {
    SynthConfig s;
    s.count = cfg.get_int("synth.count", s.count);
    s.prevalence = cfg.get_double("synth.prevalence", s.prevalence);
    s.noise_sigma = cfg.get_double("synth.sigma", s.noise_sigma);
    s.spike_g = cfg.get_double("synth.spike_g", s.spike_g);
    s.base_g = cfg.get_double("synth.base_g", s.base_g);
    s.sensor_width = cfg.get_int("synth.sensor_width", s.sensor_width);
    s.fall_blob_w = cfg.get_int("synth.fall_blob_w", s.fall_blob_w);
    s.fall_blob_h = cfg.get_int("synth.fall_blob_h", s.fall_blob_h);
    s.nofall_blob_w = cfg.get_int("synth.nofall_blob_w", s.nofall_blob_w);
    s.nofall_blob_h = cfg.get_int("synth.nofall_blob_h", s.nofall_blob_h);
    s.blob_intensity = cfg.get_double("synth.blob_intensity", s.blob_intensity);
    s.background = cfg.get_double("synth.background", s.background);
    s.seed = cfg.get_u64("synth.seed", s.seed);
    s.validate();
    return s;
}

SplitSpec split_from_config(const Config& cfg) {
    SplitSpec s;
    s.train = cfg.get_double("split.train", s.train);
    s.val = cfg.get_double("split.val", s.val);
    s.test = cfg.get_double("split.test", s.test);
    s.seed = cfg.get_u64("split.seed", s.seed);
    s.validate();
    return s;
}

TrainConfig train_from_config(const Config& cfg) {
    TrainConfig t;
    t.epochs = cfg.get_int("train.epochs", t.epochs);
    t.batch = cfg.get_int("train.batch", t.batch);
    t.seed = cfg.get_u64("train.seed", t.seed);
    t.early_stop_disabled = cfg.get_bool("train.early_stop_disabled", true);
    const std::string algo = cfg.get("train.optimizer", "adam");
    if (algo == "adam") {
        t.optimizer.algorithm = OptimizerConfig::Algorithm::Adam;
    } else if (algo == "sgd") {
        t.optimizer.algorithm = OptimizerConfig::Algorithm::SGD;
    } else {
        throw ConfigError("train.optimizer must be adam or sgd, got " + algo);
    }
    t.optimizer.lr = cfg.get_double("train.lr", t.optimizer.lr);
    t.optimizer.momentum = cfg.get_double("train.momentum", t.optimizer.momentum);
    t.optimizer.beta1 = cfg.get_double("train.beta1", t.optimizer.beta1);
    t.optimizer.beta2 = cfg.get_double("train.beta2", t.optimizer.beta2);
    t.optimizer.epsilon = cfg.get_double("train.epsilon", t.optimizer.epsilon);
    t.validate();
    return t;
}

ModelProfile profile_from_config(const Config& cfg) {
    ModelProfile p;
    p.sensor_filters = cfg.get_int("model.sensor_filters", p.sensor_filters);
    p.cam_filters1 = cfg.get_int("model.cam_filters1", p.cam_filters1);
    p.cam_filters2 = cfg.get_int("model.cam_filters2", p.cam_filters2);
    p.head_width1 = cfg.get_int("model.head_width1", p.head_width1);
    p.head_width2 = cfg.get_int("model.head_width2", p.head_width2);
    p.dropout = cfg.get_double("model.dropout", p.dropout);
    p.mlp_hidden = cfg.get_int("model.mlp_hidden", p.mlp_hidden);
    return p;
}

CorpusLayout layout_from_config(const Config& cfg) {
    CorpusLayout l;
    l.root = cfg.get("corpus.root", l.root);
    if (const char* env = std::getenv("FALLFUSE_DATA_ROOT")) l.root = env;
    l.sensor_csv = cfg.get("corpus.sensor_csv", l.sensor_csv);
    l.frame_pattern = cfg.get("corpus.frame_pattern", l.frame_pattern);
    l.col_timestamp = cfg.get("corpus.col.timestamp", l.col_timestamp);
    l.col_ax = cfg.get("corpus.col.ax", l.col_ax);
    l.col_ay = cfg.get("corpus.col.ay", l.col_ay);
    l.col_az = cfg.get("corpus.col.az", l.col_az);
    l.col_activity = cfg.get("corpus.col.activity", l.col_activity);
    l.col_subject = cfg.get("corpus.col.subject", l.col_subject);
    l.col_trial = cfg.get("corpus.col.trial", l.col_trial);
    l.extra_columns = cfg.get_list("corpus.extra_columns");
    if (cfg.has("corpus.fall_set")) l.fall_set = cfg.get_int_set("corpus.fall_set");
    if (cfg.has("corpus.subjects")) {
        l.subjects.clear();
        for (int s : cfg.get_int_set("corpus.subjects")) l.subjects.push_back(s);
    }
    l.alignment_tolerance_ms = cfg.get_int("corpus.tolerance_ms", l.alignment_tolerance_ms);
    return l;
}

}  // namespace fallfuse
