#include "fallfuse/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <json.hpp>

#include "fallfuse/error.hpp"

namespace fallfuse {

namespace {

using nlohmann::json;

constexpr char kCkptMagic[17] = "FALLFUSE-CKPT-1\n";  // 16 bytes + NUL

json spec_to_json(const LayerSpec& s) {
    return json{{"kind", layer_kind_name(s.kind)}, {"filters", s.filters},
                {"kernel", s.kernel},             {"stride", s.stride},
                {"padding", s.padding},           {"window", s.window},
                {"units", s.units},               {"rate", s.rate},
                {"momentum", s.momentum},         {"epsilon", s.epsilon}};
}

LayerSpec spec_from_json(const json& j) {
    LayerSpec s;
    s.kind = layer_kind_from_name(j.at("kind").get<std::string>());
    s.filters = j.at("filters").get<int>();
    s.kernel = j.at("kernel").get<int>();
    s.stride = j.at("stride").get<int>();
    s.padding = j.at("padding").get<int>();
    s.window = j.at("window").get<int>();
    s.units = j.at("units").get<int>();
    s.rate = j.at("rate").get<double>();
    s.momentum = j.at("momentum").get<double>();
    s.epsilon = j.at("epsilon").get<double>();
    s.validate();
    return s;
}

json stack_to_json(const std::vector<LayerSpec>& stack) {
    json arr = json::array();
    for (const LayerSpec& s : stack) arr.push_back(spec_to_json(s));
    return arr;
}

std::vector<LayerSpec> stack_from_json(const json& arr) {
    std::vector<LayerSpec> out;
    for (const json& j : arr) out.push_back(spec_from_json(j));
    return out;
}

}  // namespace

void save_checkpoint(const std::string& path, Model& model) {
    std::vector<NamedTensor> entries = model.parameters();
    for (NamedTensor& b : model.buffers()) entries.push_back(b);
    Tensor std_mean, std_dev;
    if (model.standardizer().fitted()) {
        const auto& st = model.standardizer();
        std_mean = Tensor(Shape{st.width()}, st.mean());
        std_dev = Tensor(Shape{st.width()}, st.stddev());
        entries.push_back({"standardizer.mean", &std_mean});
        entries.push_back({"standardizer.stddev", &std_dev});
    }

    json manifest;
    manifest["format"] = "FALLFUSE-CKPT-1";
    manifest["variant"] = variant_name(model.spec().variant);
    manifest["sensor_width"] = model.spec().sensor_width;
    manifest["sensor_length"] = model.spec().sensor_length;
    manifest["sensor_branch"] = stack_to_json(model.spec().sensor_branch);
    manifest["cam1_branch"] = stack_to_json(model.spec().cam1_branch);
    manifest["cam2_branch"] = stack_to_json(model.spec().cam2_branch);
    manifest["head"] = stack_to_json(model.spec().head);
    json table = json::array();
    for (const NamedTensor& e : entries) {
        table.push_back(json::array({e.name, e.tensor->shape().dims()}));
    }
    manifest["tensors"] = table;

    const std::string text = manifest.dump();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot create checkpoint: " + path);
    out.write(kCkptMagic, 16);
    const auto len = static_cast<std::uint64_t>(text.size());
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const NamedTensor& e : entries) {
        out.write(reinterpret_cast<const char*>(e.tensor->data()),
                  static_cast<std::streamsize>(sizeof(double) * e.tensor->size()));
    }
    if (!out) throw IoError("checkpoint write failed: " + path);
}

Model load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    char magic[16];
    if (!in.read(magic, 16) || std::memcmp(magic, kCkptMagic, 16) != 0) {
        throw DecodeError("not a FALLFUSE-CKPT-1 checkpoint: " + path);
    }
    std::uint64_t len = 0;
    if (!in.read(reinterpret_cast<char*>(&len), sizeof(len))) {
        throw IoError("truncated checkpoint: " + path);
    }
    std::string text(len, '\0');
    if (!in.read(text.data(), static_cast<std::streamsize>(len))) {
        throw IoError("truncated checkpoint manifest: " + path);
    }

    json manifest;
    try {
        manifest = json::parse(text);
    } catch (const json::exception& e) {
        throw DecodeError("corrupt checkpoint manifest: " + std::string(e.what()));
    }

    ModelSpec spec;
    spec.variant = variant_from_name(manifest.at("variant").get<std::string>());
    spec.sensor_width = manifest.at("sensor_width").get<int>();
    spec.sensor_length = manifest.at("sensor_length").get<int>();
    spec.sensor_branch = stack_from_json(manifest.at("sensor_branch"));
    spec.cam1_branch = stack_from_json(manifest.at("cam1_branch"));
    spec.cam2_branch = stack_from_json(manifest.at("cam2_branch"));
    spec.head = stack_from_json(manifest.at("head"));

    Model model = Model::build(spec, 0);

    std::vector<NamedTensor> live = model.parameters();
    for (NamedTensor& b : model.buffers()) live.push_back(b);

    std::vector<double> std_mean, std_dev;
    for (const json& row : manifest.at("tensors")) {
        const std::string name = row.at(0).get<std::string>();
        const std::vector<int> dims = row.at(1).get<std::vector<int>>();
        Shape shape(dims);
        std::vector<double> data(static_cast<std::size_t>(shape.elements()));
        if (!in.read(reinterpret_cast<char*>(data.data()),
                     static_cast<std::streamsize>(sizeof(double) * data.size()))) {
            throw IoError("truncated checkpoint tensor " + name + ": " + path);
        }
        if (name == "standardizer.mean") {
            std_mean = std::move(data);
            continue;
        }
        if (name == "standardizer.stddev") {
            std_dev = std::move(data);
            continue;
        }
        bool found = false;
        for (NamedTensor& nt : live) {
            if (nt.name != name) continue;
            if (nt.tensor->shape() != shape) {
                throw DecodeError("checkpoint tensor " + name + " has shape " + shape.str() +
                                  ", model expects " + nt.tensor->shape().str());
            }
            *nt.tensor = Tensor(shape, std::move(data));
            found = true;
            break;
        }
        if (!found) throw DecodeError("checkpoint tensor " + name + " has no home in the model");
    }
    if (!std_mean.empty()) {
        model.standardizer() = Standardizer(std::move(std_mean), std::move(std_dev));
    }
    return model;
}

}  // namespace fallfuse
