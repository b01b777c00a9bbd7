#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fallfuse/error.hpp"
#include "fallfuse/metrics.hpp"
#include "fallfuse/model.hpp"

using namespace fallfuse;

namespace {

std::vector<FusedExample> corpus(int n, double prevalence, std::uint64_t seed,
                                 double sigma = 0.1, int width = 4) {
    SynthConfig cfg;
    cfg.count = n;
    cfg.prevalence = prevalence;
    cfg.noise_sigma = sigma;
    cfg.sensor_width = width;
    cfg.seed = seed;
    return synth_generate(cfg);
}

// Small profile keeps unit tests quick; layer kinds are identical to the
// default architecture.
ModelProfile small_profile() {
    ModelProfile p;
    p.sensor_filters = 4;
    p.cam_filters1 = 4;
    p.cam_filters2 = 8;
    p.head_width1 = 32;
    p.head_width2 = 16;
    p.mlp_hidden = 16;
    return p;
}

}  // namespace

TEST_CASE("fusion parameter count matches the closed form") {
    const ModelProfile p;  // defaults: 16 / 16-32 / 128-64, dropout 0.3
    Model model = Model::build(ModelSpec::make(Variant::Fusion, p, 4), 1);

    // Sensor branch: conv1d(16,k3) on 4 channels + batchnorm(16).
    const std::int64_t sensor_conv = 16 * (4 * 3) + 16;
    const std::int64_t sensor_bn = 2 * 16;
    // Sensor embedding: conv keeps L=4, pool halves to 2 -> 16*2 = 32 wide.
    const std::int64_t sensor_embed = 16 * 2;
    // Camera branch: conv(16,3x3,c1)+bn(16)+conv(32,3x3,c16)+bn(32).
    const std::int64_t cam_params = (16 * 9 + 16) + 2 * 16 + (32 * 16 * 9 + 32) + 2 * 32;
    // 32x32 -> pool 16x16 -> pool 8x8 with 32 channels.
    const std::int64_t cam_embed = 32 * 8 * 8;
    const std::int64_t concat = sensor_embed + 2 * cam_embed;
    const std::int64_t head = (concat * 128 + 128) + (128 * 64 + 64) + (64 * 2 + 2);
    const std::int64_t expected = sensor_conv + sensor_bn + 2 * cam_params + head;

    CHECK(model.parameter_count() == expected);
}

TEST_CASE("same seed builds bit-identical parameters") {
    Model a = Model::build(ModelSpec::make(Variant::Fusion, small_profile(), 4), 42);
    Model b = Model::build(ModelSpec::make(Variant::Fusion, small_profile(), 4), 42);
    auto pa = a.parameters();
    auto pb = b.parameters();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) {
        CHECK(pa[i].name == pb[i].name);
        REQUIRE(pa[i].tensor->size() == pb[i].tensor->size());
        for (std::int64_t j = 0; j < pa[i].tensor->size(); ++j) {
            CHECK((*pa[i].tensor)[j] == (*pb[i].tensor)[j]);
        }
    }
}

TEST_CASE("camera-only variant has no sensor parameters and runs cam1 alone") {
    Model model = Model::build(ModelSpec::make(Variant::Camera1, small_profile(), 4), 3);
    for (const NamedTensor& p : model.parameters()) {
        CHECK(p.name.find("sensor.") == std::string::npos);
        CHECK(p.name.find("cam2.") == std::string::npos);
    }
    std::vector<FusedExample> ex = corpus(4, 0.5, 9);
    ModalityBatch batch = model.make_batch(ex);
    CHECK(batch.has_cam1);
    CHECK_FALSE(batch.has_sensor);
    Tensor probs = model.forward(batch, Mode::Eval);
    CHECK(probs.shape().dim(0) == 4);
}

TEST_CASE("missing modality raises a modality error") {
    Model model = Model::build(ModelSpec::make(Variant::Fusion, small_profile(), 4), 3);
    std::vector<FusedExample> ex = corpus(2, 0.5, 9);
    ModalityBatch batch = model.make_batch(ex);
    batch.has_cam2 = false;
    CHECK_THROWS_AS(model.forward(batch, Mode::Eval), ModalityError);

    // Sensor narrower than the model wants.
    Model wide = Model::build(ModelSpec::make(Variant::MultiSensorFusion, small_profile(), 12), 3);
    CHECK_THROWS_AS(wide.make_batch(ex), ModalityError);
}

TEST_CASE("untrained forward emits proper probabilities") {
    Model model = Model::build(ModelSpec::make(Variant::Fusion, small_profile(), 4), 5);
    std::vector<FusedExample> ex = corpus(6, 0.5, 10);
    Tensor probs = model.forward(model.make_batch(ex), Mode::Eval);
    for (int i = 0; i < 6; ++i) {
        CHECK(probs.at(i, 0) > 0.0);
        CHECK(probs.at(i, 0) < 1.0);
        CHECK(probs.at(i, 1) > 0.0);
        CHECK(std::abs(probs.at(i, 0) + probs.at(i, 1) - 1.0) <= 1e-12);
    }
}

TEST_CASE("eval forward is batch-independent and order-equivariant") {
    Model model = Model::build(ModelSpec::make(Variant::Fusion, small_profile(), 4), 6);
    std::vector<FusedExample> ex = corpus(8, 0.5, 11);
    // Standardizer tied to the corpus so make_batch is deterministic.
    std::vector<std::vector<double>> rows;
    for (const FusedExample& e : ex) rows.push_back(e.sensor);
    model.standardizer().fit(rows, 4);

    Tensor all = model.forward(model.make_batch(ex), Mode::Eval);

    // Duplicated example gives identical rows.
    std::vector<FusedExample> dup = {ex[0], ex[0], ex[1]};
    Tensor dprobs = model.forward(model.make_batch(dup), Mode::Eval);
    CHECK(dprobs.at(0, 0) == dprobs.at(1, 0));
    CHECK(dprobs.at(0, 1) == dprobs.at(1, 1));

    // Batch of one matches the same example inside the batch of eight:
    // Eval-mode batch norm uses running statistics.
    std::vector<FusedExample> solo = {ex[3]};
    Tensor sprobs = model.forward(model.make_batch(solo), Mode::Eval);
    CHECK(std::abs(sprobs.at(0, 0) - all.at(3, 0)) <= 1e-12);
    CHECK(std::abs(sprobs.at(0, 1) - all.at(3, 1)) <= 1e-12);

    // Permuting examples permutes rows identically.
    std::vector<FusedExample> rev(ex.rbegin(), ex.rend());
    Tensor rprobs = model.forward(model.make_batch(rev), Mode::Eval);
    for (int i = 0; i < 8; ++i) {
        CHECK(rprobs.at(i, 0) == all.at(7 - i, 0));
        CHECK(rprobs.at(i, 1) == all.at(7 - i, 1));
    }
}

TEST_CASE("prediction tie-break") {
    Tensor probs(Shape{3, 2}, {0.9, 0.1, 0.1, 0.9, 0.5, 0.5});
    CHECK(predict_row(probs, 0).value == 0);
    CHECK(predict_row(probs, 1).value == 1);
    CHECK(predict_row(probs, 2).value == 0);  // exact tie keeps no-fall
}

TEST_CASE("zeroed camera frames collapse to a sensor-only function") {
    Model model = Model::build(ModelSpec::make(Variant::Fusion, small_profile(), 4), 8);
    std::vector<FusedExample> ex = corpus(2, 0.5, 13);
    ex[1].sensor = ex[0].sensor;  // same sensor, different frames
    std::vector<FusedExample> zeroed = ex;
    std::fill(zeroed[0].cam1.pixels.begin(), zeroed[0].cam1.pixels.end(), 0.0);
    std::fill(zeroed[0].cam2.pixels.begin(), zeroed[0].cam2.pixels.end(), 0.0);
    std::fill(zeroed[1].cam1.pixels.begin(), zeroed[1].cam1.pixels.end(), 0.0);
    std::fill(zeroed[1].cam2.pixels.begin(), zeroed[1].cam2.pixels.end(), 0.0);
    Tensor probs = model.forward(model.make_batch(zeroed), Mode::Eval);
    CHECK(probs.at(0, 0) == probs.at(1, 0));
    CHECK(probs.at(0, 1) == probs.at(1, 1));
}

TEST_CASE("argmax is stable under positive feature scaling for most rows") {
    Model model = Model::build(ModelSpec::make(Variant::Fusion, small_profile(), 4), 21);
    std::vector<FusedExample> ex = corpus(40, 0.4, 17);
    std::vector<std::vector<double>> rows;
    for (const FusedExample& e : ex) rows.push_back(e.sensor);
    model.standardizer().fit(rows, 4);
    ModalityBatch batch = model.make_batch(ex);
    std::vector<BinaryLabel> base = predict(model.forward(batch, Mode::Eval));

    ModalityBatch scaled = batch;
    for (Tensor* t : {&scaled.sensor, &scaled.cam1, &scaled.cam2}) {
        for (std::int64_t i = 0; i < t->size(); ++i) (*t)[i] *= 1.25;
    }
    std::vector<BinaryLabel> after = predict(model.forward(scaled, Mode::Eval));
    int same = 0;
    for (std::size_t i = 0; i < base.size(); ++i) same += base[i] == after[i];
    CHECK(same >= static_cast<int>(0.95 * static_cast<double>(base.size())));
}

TEST_CASE("one-epoch training smoke") {
    std::vector<FusedExample> data = corpus(10, 0.5, 19);
    std::vector<FusedExample> val(data.begin() + 5, data.end());
    std::vector<FusedExample> train(data.begin(), data.begin() + 5);
    Model model = Model::build(ModelSpec::make(Variant::Fusion, small_profile(), 4), 23);
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.batch = 4;
    std::vector<EpochLog> logs = train_model(model, train, val, cfg);
    REQUIRE(logs.size() == 1);
    CHECK(logs[0].epoch == 1);
    CHECK(std::isfinite(logs[0].train_loss));
    CHECK(logs[0].val_accuracy >= 0.0);
    CHECK(logs[0].val_accuracy <= 1.0);
    CHECK(logs[0].val_f1 >= 0.0);
    CHECK(logs[0].val_f1 <= 1.0);
}

TEST_CASE("zero learning rate freezes parameters and metrics") {
    std::vector<FusedExample> data = corpus(30, 0.5, 29);
    std::vector<FusedExample> train(data.begin(), data.begin() + 20);
    std::vector<FusedExample> val(data.begin() + 20, data.end());
    Model model = Model::build(ModelSpec::make(Variant::Sensor1DCNN, small_profile(), 4), 31);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch = 8;
    cfg.optimizer.lr = 0.0;  // documented null optimizer

    std::vector<double> before;
    for (const NamedTensor& p : model.parameters()) {
        for (std::int64_t i = 0; i < p.tensor->size(); ++i) before.push_back((*p.tensor)[i]);
    }
    std::vector<EpochLog> logs = train_model(model, train, val, cfg);
    std::vector<double> after;
    for (const NamedTensor& p : model.parameters()) {
        for (std::int64_t i = 0; i < p.tensor->size(); ++i) after.push_back((*p.tensor)[i]);
    }
    CHECK(before == after);
    for (const EpochLog& log : logs) {
        CHECK(log.val_accuracy == logs[0].val_accuracy);
        CHECK(log.val_f1 == logs[0].val_f1);
    }
}

TEST_CASE("training is bit-deterministic per seed") {
    std::vector<FusedExample> data = corpus(40, 0.4, 37);
    std::vector<FusedExample> train(data.begin(), data.begin() + 30);
    std::vector<FusedExample> val(data.begin() + 30, data.end());
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch = 8;

    const auto run = [&]() {
        Model model = Model::build(ModelSpec::make(Variant::Fusion, small_profile(), 4), 41);
        return train_model(model, train, val, cfg);
    };
    std::vector<EpochLog> a = run();
    std::vector<EpochLog> b = run();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].epoch == static_cast<int>(i) + 1);
        CHECK(a[i].train_loss == b[i].train_loss);
        CHECK(a[i].val_accuracy == b[i].val_accuracy);
        CHECK(a[i].val_f1 == b[i].val_f1);
    }
}

TEST_CASE("fusion at least matches the sensor MLP when cameras are informative") {
    // sigma 0.25 leaves the camera blobs clearly legible; ties count.
    std::vector<FusedExample> data = corpus(600, 0.3, 53, 0.25);
    SplitSpec split_spec;
    Splits splits = split(data, split_spec);
    std::vector<BinaryLabel> truths;
    for (const FusedExample& e : splits.test) truths.push_back(e.label);

    const auto accuracy_of = [&](Variant v, std::uint64_t seed) {
        Model model = Model::build(ModelSpec::make(v, small_profile(), 4), seed);
        TrainConfig cfg;
        cfg.epochs = 3;
        cfg.batch = 64;
        train_model(model, splits.train, splits.val, cfg);
        return metrics(confusion(evaluate(model, splits.test), truths),
                       Averaging::PerClassPositive)
            .accuracy;
    };
    int wins = 0;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        if (accuracy_of(Variant::Fusion, seed) >= accuracy_of(Variant::SensorMLP, seed)) ++wins;
    }
    CHECK(wins >= 8);
}

TEST_CASE("multi-sensor fusion trains on the same wide corpus as mono fusion") {
    std::vector<FusedExample> data = corpus(60, 0.4, 43, 0.1, 12);
    std::vector<FusedExample> train(data.begin(), data.begin() + 40);
    std::vector<FusedExample> val(data.begin() + 40, data.end());
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.batch = 16;

    Model mono = Model::build(ModelSpec::make(Variant::Fusion, small_profile(), 4), 47);
    Model multi =
        Model::build(ModelSpec::make(Variant::MultiSensorFusion, small_profile(), 12), 47);
    CHECK(train_model(mono, train, val, cfg).size() == 1);
    CHECK(train_model(multi, train, val, cfg).size() == 1);
    CHECK(multi.spec().sensor_width == 12);
}
