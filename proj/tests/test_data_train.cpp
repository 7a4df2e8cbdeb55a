#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <functional>

#include "kernels.hpp"
#include "support.hpp"
#include "zipit/checkpoint.hpp"
#include "zipit/error.hpp"
#include "zipit/forward.hpp"

using namespace zipit;
using testing::random_tensor;

namespace {

TaskSpec spec_for(std::vector<int32_t> classes, uint64_t seed = 3, uint64_t draw = 0) {
    TaskSpec s;
    s.class_subset = std::move(classes);
    s.samples_per_class = 40;
    s.seed = seed;
    s.draw = draw;
    return s;
}

double dot(const Tensor& a, const Tensor& b) {
    double s = 0;
    for (size_t i = 0; i < a.size(); ++i) s += double(a[i]) * b[i];
    return s;
}

// Central difference of <dy, f(x)> with respect to every entry of x.
void check_gradient(Tensor& x, const Tensor& dy, const std::function<Tensor()>& f, const Tensor& analytic,
                    double tol) {
    const float h = 1e-2f;
    for (size_t i = 0; i < x.size(); ++i) {
        const float keep = x[i];
        x[i] = keep + h;
        const double up = dot(dy, f());
        x[i] = keep - h;
        const double down = dot(dy, f());
        x[i] = keep;
        const double numeric = (up - down) / (2.0 * h);
        CHECK(analytic[i] == doctest::Approx(numeric).epsilon(tol).scale(1.0));
    }
}

}  // namespace

TEST_CASE("datasets are deterministic and share class means across tasks") {
    const Dataset a = make_dataset(spec_for({0, 1, 2}));
    const Dataset b = make_dataset(spec_for({0, 1, 2}));
    CHECK(a.x == b.x);
    CHECK(a.y == b.y);
    CHECK(a.size() == 120);
    CHECK(make_dataset(spec_for({0, 1, 2}, 3, 1)).x != a.x);
    CHECK(class_mean(3, 4, {8}) == class_mean(3, 4, {8}));
    CHECK(class_mean(3, 4, {8}) != class_mean(3, 5, {8}));
    double norm = 0;
    const Tensor mean4 = class_mean(3, 4, {8});
    for (float v : mean4.data()) norm += double(v) * v;
    CHECK(std::sqrt(norm) == doctest::Approx(kClassMeanRadius).epsilon(1e-5));
    // Sample mean of a class approaches its mean.
    TaskSpec big = spec_for({2});
    big.samples_per_class = 4000;
    const Dataset d = make_dataset(big);
    const Tensor mu = class_mean(3, 2, {8});
    for (int64_t j = 0; j < 8; ++j) {
        double m = 0;
        for (int64_t r = 0; r < d.size(); ++r) m += d.x.at(r, j);
        CHECK(std::abs(m / d.size() - mu[j]) < 4.0 / std::sqrt(4000.0));
    }
}

TEST_CASE("spec validation") {
    CHECK_THROWS_AS(make_dataset(spec_for({})), ConfigError);
    CHECK_THROWS_AS(make_dataset(spec_for({2, 1})), ConfigError);
    CHECK_THROWS_AS(make_dataset(spec_for({1, 1})), ConfigError);
    TaskSpec s = spec_for({0});
    s.image = {1, 4};
    CHECK_THROWS_AS(make_dataset(s), ConfigError);
}

TEST_CASE("concat rebases labels and rejects overlapping classes") {
    const Dataset a = make_dataset(spec_for({0, 1}));
    const Dataset b = make_dataset(spec_for({5, 6, 7}));
    const std::vector<Dataset> parts{a, b};
    const Dataset c = concat(parts);
    CHECK(c.size() == a.size() + b.size());
    CHECK(c.classes == std::vector<int32_t>{0, 1, 5, 6, 7});
    CHECK(c.y[static_cast<size_t>(a.size())] == 2);
    const std::vector<Dataset> dup{a, a};
    CHECK_THROWS_AS(concat(dup), ConfigError);
    const Dataset s = sample_rows(c, 10, 1);
    CHECK(s.size() == 10);
    CHECK(sample_rows(c, 10, 1).x == s.x);
}

TEST_CASE("dataset file round trip and corruption") {
    const Dataset a = make_dataset(spec_for({0, 3}));
    const auto path = (std::filesystem::temp_directory_path() / "zipit_ds.zds").string();
    save_dataset(a, path);
    const Dataset b = load_dataset(path);
    CHECK(b.x == a.x);
    CHECK(b.y == a.y);
    CHECK(b.classes == a.classes);
    std::string bytes = read_file_bytes(path);
    write_file_bytes(path, bytes.substr(0, bytes.size() - 8));
    CHECK_THROWS_AS(load_dataset(path), FormatError);
    bytes[1] = '?';
    write_file_bytes(path, bytes);
    CHECK_THROWS_AS(load_dataset(path), FormatError);
}

TEST_CASE("architecture strings") {
    CHECK(Arch::parse("mlp:64,32").str() == "mlp:64,32");
    CHECK(Arch::parse("conv:8,16:skip").skip);
    CHECK_THROWS_AS(Arch::parse("rnn:4"), ConfigError);
    CHECK_THROWS_AS(Arch::parse("mlp:4,x"), ConfigError);
    CHECK_THROWS_AS(Arch::parse("mlp:0"), ConfigError);
    CHECK_THROWS_AS(Arch::parse("conv:4:wide"), ConfigError);
    CHECK_THROWS_AS(build_model(Arch::parse("conv:4"), {8}, 3), ConfigError);
}

TEST_CASE("linear and conv backward match finite differences") {
    Tensor x = random_tensor({3, 5}, 1);
    const Tensor w = random_tensor({4, 5}, 2), b = random_tensor({4}, 3), dy = random_tensor({3, 4}, 4);
    const Tensor dx = kernels::linear_backward(x, w, dy, nullptr, nullptr);
    check_gradient(x, dy, [&] { return kernels::linear_forward(x, w, b); }, dx, 1e-3);

    Tensor xc = random_tensor({2, 2, 4, 4}, 5);
    Tensor wc = random_tensor({3, 2, 3, 3}, 6);
    const Tensor bc = random_tensor({3}, 7), dyc = random_tensor({2, 3, 4, 4}, 8);
    Tensor dw({3, 2, 3, 3}), db({3});
    const Tensor dxc = kernels::conv_backward(xc, wc, dyc, 1, 1, &dw, &db);
    check_gradient(xc, dyc, [&] { return kernels::conv_forward(xc, wc, bc, 1, 1); }, dxc, 1e-3);
    check_gradient(wc, dyc, [&] { return kernels::conv_forward(xc, wc, bc, 1, 1); }, dw, 1e-3);
    double total = 0;
    for (float v : dyc.data()) total += v;
    double dbs = 0;
    for (float v : db.data()) dbs += v;
    CHECK(dbs == doctest::Approx(total).epsilon(1e-4));
}

TEST_CASE("batchnorm backward matches finite differences") {
    Tensor x = random_tensor({6, 3}, 11);
    const Tensor g = random_tensor({3}, 12), bias = random_tensor({3}, 13), dy = random_tensor({6, 3}, 14);
    auto f = [&]() {
        std::vector<double> mean, var;
        kernels::channel_moments(x, mean, var);
        return kernels::batchnorm_forward(x, g, bias, mean, var, 1e-5, nullptr);
    };
    std::vector<double> mean, var;
    kernels::channel_moments(x, mean, var);
    kernels::NormCache cache;
    kernels::batchnorm_forward(x, g, bias, mean, var, 1e-5, &cache);
    const Tensor dx = kernels::batchnorm_backward(dy, g, cache, nullptr, nullptr);
    check_gradient(x, dy, f, dx, 2e-2);
}

TEST_CASE("training fits the synthetic task and logs each epoch") {
    TrainConfig cfg;
    cfg.arch = Arch::parse("mlp:32");
    cfg.epochs = 30;
    std::vector<TrainLogRow> log;
    const Dataset d = make_dataset(spec_for({0, 1, 2, 3, 4}));
    const ModelGraph m = train(d, cfg, &log);
    REQUIRE(log.size() == 30);
    CHECK(log.back().loss < log.front().loss);
    CHECK(accuracy(m, d, "head") > 0.85);
    CHECK(log.back().acc > 0.85);
    // Same seed, same bytes.
    CHECK(encode_checkpoint(train(d, cfg)) == encode_checkpoint(m));
    cfg.seed = 1;
    CHECK(train(d, cfg) != m);
}

TEST_CASE("conv training runs with batch norm and skip blocks") {
    TaskSpec s = spec_for({0, 1});
    s.image = {1, 4, 4};
    TrainConfig cfg;
    cfg.arch = Arch::parse("conv:4:skip");
    cfg.epochs = 5;
    const Dataset d = make_dataset(s);
    const ModelGraph m = train(d, cfg);
    m.validate();
    CHECK(accuracy(m, d, "head") > 0.6);
    CHECK(m.node("s1_bn").param("running_var") != Tensor({4}, 1.0f));
}

TEST_CASE("divergence is reported with the epoch") {
    TrainConfig cfg;
    cfg.arch = Arch::parse("mlp:16");
    cfg.lr = 1e6;
    cfg.epochs = 5;
    try {
        train(make_dataset(spec_for({0, 1, 2})), cfg);
        FAIL("expected divergence");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("epoch") != std::string::npos);
    }
    cfg.lr = -1;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("weight interpolation") {
    const ModelGraph a = testing::random_model("mlp:8", {4}, 3, 0), b = testing::random_model("mlp:8", {4}, 3, 1);
    CHECK(interpolate_weights(a, b, 1.0).nodes == a.nodes);
    CHECK(interpolate_weights(a, b, 0.0).nodes == b.nodes);
    const ModelGraph h = interpolate_weights(a, b, 0.25);
    const auto& w = h.node("fc1").param("weight");
    for (size_t i = 0; i < w.size(); ++i)
        CHECK(w[i] == doctest::Approx(0.25 * a.node("fc1").param("weight")[i] +
                                      0.75 * b.node("fc1").param("weight")[i]));
    CHECK_THROWS_AS(interpolate_weights(a, testing::random_model("mlp:9", {4}, 3, 1), 0.5), TopologyError);
}
