#include "zipit/eval.hpp"

#include <algorithm>
#include <cmath>

#include "zipit/error.hpp"
#include "zipit/forward.hpp"
#include "zipit/rng.hpp"
#include "zipit/stats.hpp"

namespace zipit {

namespace {

constexpr uint64_t kInitStream = 0x696e6974ull;   // "init"
constexpr uint64_t kProbeStream = 0x70726f62ull;  // "prob"

Dataset stack_inputs(std::span<const Dataset> parts) {
    std::vector<Tensor> xs;
    int64_t n = 0;
    const Shape sample = parts[0].sample_shape();
    for (const auto& p : parts) {
        if (p.sample_shape() != sample) throw ShapeError("task inputs differ in shape");
        n += p.size();
    }
    Shape full{n};
    full.insert(full.end(), sample.begin(), sample.end());
    Dataset out;
    out.x = Tensor(full);
    out.classes = {0};
    int64_t off = 0;
    for (const auto& p : parts) {
        std::copy(p.x.raw(), p.x.raw() + p.x.size(), out.x.raw() + off);
        off += static_cast<int64_t>(p.x.size());
    }
    out.y.assign(static_cast<size_t>(n), 0);
    return out;
}

std::pair<double, double> mean_std(const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    if (v.size() < 2) return {m, 0.0};
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return {m, std::sqrt(s / static_cast<double>(v.size() - 1))};
}

ZipPlan plan_for(const TaskPair& pair) { return plan_zip(pair.models); }

}  // namespace

double cross_entropy(const Tensor& logits, std::span<const int32_t> labels) {
    const int64_t n = logits.dim(0), c = logits.dim(1);
    double loss = 0.0;
    for (int64_t r = 0; r < n; ++r) {
        double mx = logits.at(r, 0);
        for (int64_t j = 1; j < c; ++j) mx = std::max(mx, static_cast<double>(logits.at(r, j)));
        double z = 0.0;
        for (int64_t j = 0; j < c; ++j) z += std::exp(logits.at(r, j) - mx);
        loss -= logits.at(r, labels[static_cast<size_t>(r)]) - mx - std::log(z);
    }
    return loss / static_cast<double>(n);
}

EvalResult evaluate(const ModelGraph& model, std::span<const TaskData> tasks) {
    if (tasks.empty()) throw ConfigError("evaluate needs at least one task");
    EvalResult r;
    std::vector<int64_t> widths;
    for (const auto& t : tasks) {
        if (std::find(model.heads.begin(), model.heads.end(), t.head) == model.heads.end())
            throw ConfigError("model has no head '" + t.head + "'");
        const int64_t w = feature_width(model, t.head);
        if (w < t.data.n_classes())
            throw ConfigError("head '" + t.head + "' has " + std::to_string(w) + " outputs for " +
                              std::to_string(t.data.n_classes()) + " classes");
        widths.push_back(w);
    }
    int64_t correct = 0, total = 0, offset = 0;
    for (size_t t = 0; t < tasks.size(); ++t) {
        const Dataset& d = tasks[t].data;
        const Activations acts = forward(model, d.x);
        const auto own = argmax_rows(acts.at(tasks[t].head));
        int64_t ok = 0;
        for (size_t i = 0; i < own.size(); ++i) ok += own[i] == d.y[i];
        r.per_task_acc.push_back(static_cast<double>(ok) / static_cast<double>(d.size()));
        // Joint prediction over the concatenated per-head softmax.
        for (int64_t row = 0; row < d.size(); ++row) {
            double best = -1.0;
            int64_t arg = -1, base = 0;
            for (size_t h = 0; h < tasks.size(); ++h) {
                const Tensor& lg = acts.at(tasks[h].head);
                const int64_t c = lg.dim(1);
                double mx = lg.at(row, 0);
                for (int64_t j = 1; j < c; ++j) mx = std::max(mx, static_cast<double>(lg.at(row, j)));
                double z = 0.0;
                for (int64_t j = 0; j < c; ++j) z += std::exp(lg.at(row, j) - mx);
                for (int64_t j = 0; j < c; ++j) {
                    const double p = std::exp(lg.at(row, j) - mx) / z;
                    if (p > best) {
                        best = p;
                        arg = base + j;
                    }
                }
                base += c;
            }
            correct += arg == offset + d.y[static_cast<size_t>(row)];
            ++total;
        }
        offset += widths[t];
    }
    r.joint_acc = static_cast<double>(correct) / static_cast<double>(total);
    double s = 0.0;
    for (double a : r.per_task_acc) s += a;
    r.avg_task_acc = s / static_cast<double>(r.per_task_acc.size());
    r.flops = count_flops(model);
    return r;
}

EvalResult evaluate(const MergedModel& m, std::span<const Dataset> tasks) {
    if (tasks.size() != m.task_heads.size())
        throw ConfigError("merged model has " + std::to_string(m.task_heads.size()) + " task heads but " +
                          std::to_string(tasks.size()) + " datasets were given");
    std::vector<TaskData> td;
    for (size_t h = 0; h < tasks.size(); ++h) td.push_back({tasks[h], m.task_heads[h].front()});
    EvalResult r = evaluate(m.graph, td);
    r.meta = m.graph.meta;
    return r;
}

std::vector<BarrierRow> barrier_curve(const ModelGraph& a, const ModelGraph& b_aligned,
                                      std::span<const BarrierTask> tasks, const std::vector<double>& grid) {
    if (grid.empty()) throw ConfigError("barrier curve needs a non-empty gamma grid");
    if (tasks.empty()) throw ConfigError("barrier curve needs at least one task");
    if (a.heads.size() != 1) throw ConfigError("barrier curve expects single-head models");
    const std::string head = a.heads.front();
    std::vector<Dataset> inputs;
    for (const auto& t : tasks) inputs.push_back(t.data);
    const Dataset reset_data = stack_inputs(inputs);
    std::vector<BarrierRow> rows;
    for (double gamma : grid) {
        ModelGraph m = reset_batchnorms(interpolate_weights(a, b_aligned, gamma), reset_data);
        double loss = 0.0, acc = 0.0;
        for (const auto& t : tasks) {
            ModelGraph mt = m;
            if (t.head == HeadSource::FromA) mt.node(head).params = a.node(head).params;
            if (t.head == HeadSource::FromB) mt.node(head).params = b_aligned.node(head).params;
            const Activations acts = forward(mt, t.data.x, head);
            loss += cross_entropy(acts.at(head), t.data.y);
            const auto pred = argmax_rows(acts.at(head));
            int64_t ok = 0;
            for (size_t i = 0; i < pred.size(); ++i) ok += pred[i] == t.data.y[i];
            acc += static_cast<double>(ok) / static_cast<double>(pred.size());
        }
        const auto nt = static_cast<double>(tasks.size());
        rows.push_back({gamma, loss / nt, acc / nt});
    }
    return rows;
}

ModelGraph permute_onto(const ModelGraph& a, const ModelGraph& b, const Dataset& probe) {
    const std::vector<ModelGraph> pair{a, b};
    const ZipPlan plan = plan_zip(pair);
    std::vector<std::string> anchors;
    for (const auto& mp : plan.merge_points) anchors.push_back(mp.anchor);
    const auto feats = capture(pair, probe, anchors);
    // P[p] maps B's units onto A's order: row i selects B unit pi(i).
    std::map<std::string, Tensor> perm_of_node;
    for (size_t p = 0; p < plan.merge_points.size(); ++p) {
        const MergeMap mm = match_permute(correlations(feats[p]));
        Tensor P = scale(mm.M_block(1), 2.0f);
        for (const auto& id : plan.merge_points[p].nodes) perm_of_node[id] = P;
    }
    ModelGraph out = b;
    for (const auto& id : b.topo_order()) {
        const LayerNode& n = b.node(id);
        if (n.kind == LayerKind::Input) continue;
        const auto pit = perm_of_node.find(id);
        const LayerNode* orig[1] = {&n};
        std::vector<Tensor> M, U;
        if (is_weighted(n.kind)) {
            const auto qit = perm_of_node.find(n.inputs[0]);
            U.push_back(qit != perm_of_node.end() ? transpose(qit->second)
                                                  : Tensor::identity(feature_width(b, n.inputs[0])));
        }
        if (pit != perm_of_node.end()) {
            M.push_back(pit->second);
        } else if (is_weighted(n.kind)) {
            M.push_back(Tensor::identity(feature_width(b, id)));
        } else {
            continue;
        }
        out.node(id) = merge_node(orig, M, U);
    }
    out.validate();
    return out;
}

void ExperimentConfig::validate() const {
    if (classes_per_task < 2) throw ConfigError("classes_per_task must be at least 2");
    if (samples_per_class < 2 || test_per_class < 1) throw ConfigError("per-class sample counts are too small");
    if (probe_size < 2) throw ConfigError("probe_size must be at least 2");
    if (seeds.empty()) throw ConfigError("at least one seed is required");
    train.validate();
    match.validate();
}

Dataset make_probe(std::span<const Dataset> train_sets, int64_t size, uint64_t seed) {
    const Dataset all = concat(train_sets);
    return sample_rows(all, size, seed);
}

TaskPair make_task_pair(const ExperimentConfig& cfg, uint64_t seed) {
    cfg.validate();
    TaskPair pair;
    const uint64_t world = Rng::mix({cfg.data_seed, seed});
    for (int64_t t = 0; t < 2; ++t) {
        TaskSpec spec;
        for (int64_t c = 0; c < cfg.classes_per_task; ++c)
            spec.class_subset.push_back(static_cast<int32_t>(t * cfg.classes_per_task + c));
        spec.input_dim = cfg.input_dim;
        spec.image = cfg.image;
        spec.samples_per_class = cfg.samples_per_class;
        spec.seed = world;
        spec.draw = 0;
        pair.train.push_back(make_dataset(spec));
        spec.draw = 1;
        spec.samples_per_class = cfg.test_per_class;
        pair.test.push_back(make_dataset(spec));
        TrainConfig tc = cfg.train;
        tc.seed = Rng::mix({seed, static_cast<uint64_t>(t), kInitStream});
        pair.logs.emplace_back();
        ModelGraph m = train(pair.train.back(), tc, &pair.logs.back());
        m.meta["tag"] = t == 0 ? "A" : "B";
        pair.models.push_back(std::move(m));
    }
    pair.probe = make_probe(pair.train, cfg.probe_size, Rng::mix({seed, kProbeStream}));
    return pair;
}

std::string_view method_name(Method m) {
    switch (m) {
    case Method::Ensemble: return "ensemble";
    case Method::ZipPartial: return "zipit_partial";
    case Method::ZipFull: return "zipit_full";
    case Method::Permute: return "permute";
    case Method::WeightAvg: return "weight_avg";
    }
    return "?";
}

EvalResult run_method(const TaskPair& pair, Method method, const MatchConfig& zip_cfg) {
    ZipPlan plan = plan_for(pair);
    plan.match_cfg = zip_cfg;
    switch (method) {
    case Method::Ensemble: plan.set_stop(0); break;
    case Method::ZipPartial: plan.set_stop(plan.partial_stop()); break;
    case Method::ZipFull: break;
    case Method::Permute: plan.match_cfg.algorithm = MatchAlgorithm::Permute; break;
    case Method::WeightAvg: plan.match_cfg.algorithm = MatchAlgorithm::Identity; break;
    }
    const MergedModel m = zip(pair.models, plan, pair.probe);
    return evaluate(m, pair.test);
}

std::vector<MethodSummary> compare_methods(const ExperimentConfig& cfg, std::span<const Method> methods) {
    std::vector<std::vector<double>> joint(methods.size()), avg(methods.size());
    std::vector<int64_t> flops(methods.size(), 0);
    for (auto seed : cfg.seeds) {
        const TaskPair pair = make_task_pair(cfg, seed);
        for (size_t i = 0; i < methods.size(); ++i) {
            const EvalResult r = run_method(pair, methods[i], cfg.match);
            joint[i].push_back(r.joint_acc);
            avg[i].push_back(r.avg_task_acc);
            flops[i] = r.flops;
        }
    }
    std::vector<MethodSummary> out;
    for (size_t i = 0; i < methods.size(); ++i) {
        const auto [jm, js] = mean_std(joint[i]);
        const auto [am, as] = mean_std(avg[i]);
        out.push_back({methods[i], jm, js, am, as, flops[i]});
    }
    return out;
}

SweepKind sweep_kind_from_name(std::string_view name) {
    for (auto k : {SweepKind::PartialZip, SweepKind::Beta, SweepKind::ProbeSize})
        if (sweep_kind_name(k) == name) return k;
    throw ConfigError("unknown sweep kind '" + std::string(name) + "' (partial_zip, beta, probe_size)");
}

std::string_view sweep_kind_name(SweepKind k) {
    switch (k) {
    case SweepKind::PartialZip: return "partial_zip";
    case SweepKind::Beta: return "beta";
    case SweepKind::ProbeSize: return "probe_size";
    }
    return "?";
}

std::vector<double> default_sweep_grid(SweepKind kind, const ExperimentConfig& cfg) {
    switch (kind) {
    case SweepKind::PartialZip: {
        TaskSpec spec;
        spec.class_subset = {0, 1};
        spec.input_dim = cfg.input_dim;
        spec.image = cfg.image;
        const ModelGraph g = build_model(cfg.train.arch, spec.sample_shape(), cfg.classes_per_task);
        const std::vector<ModelGraph> pair{g, g};
        std::vector<double> grid;
        for (auto s : plan_zip(pair).valid_stops) grid.push_back(static_cast<double>(s));
        return grid;
    }
    case SweepKind::Beta: return {0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
    case SweepKind::ProbeSize: return {16, 64, 256, 1024};
    }
    return {};
}

SweepResult sweep(SweepKind kind, const std::vector<double>& grid, const ExperimentConfig& cfg) {
    if (grid.empty()) throw ConfigError("sweep grid is empty");
    SweepResult res;
    res.kind = kind;
    std::vector<std::vector<double>> joint(grid.size()), avg(grid.size());
    std::vector<int64_t> flops(grid.size(), 0);
    for (auto seed : cfg.seeds) {
        TaskPair pair = make_task_pair(cfg, seed);
        for (size_t g = 0; g < grid.size(); ++g) {
            ZipPlan plan = plan_for(pair);
            plan.match_cfg = cfg.match;
            Dataset probe = pair.probe;
            switch (kind) {
            case SweepKind::PartialZip: {
                const double v = grid[g];
                if (v != std::floor(v)) throw ConfigError("partial-zip stops must be integers");
                plan.set_stop(static_cast<int64_t>(v));
                break;
            }
            case SweepKind::Beta:
                plan.match_cfg.beta = grid[g];
                plan.match_cfg.validate();
                break;
            case SweepKind::ProbeSize:
                if (grid[g] < 2 || grid[g] != std::floor(grid[g])) throw ConfigError("probe sizes must be integers >= 2");
                probe = make_probe(pair.train, static_cast<int64_t>(grid[g]), Rng::mix({seed, kProbeStream}));
                break;
            }
            const EvalResult r = evaluate(zip(pair.models, plan, probe), pair.test);
            joint[g].push_back(r.joint_acc);
            avg[g].push_back(r.avg_task_acc);
            flops[g] = r.flops;
        }
    }
    for (size_t g = 0; g < grid.size(); ++g) {
        const auto [jm, js] = mean_std(joint[g]);
        const auto [am, as] = mean_std(avg[g]);
        res.rows.push_back({grid[g], jm, js, am, as, flops[g]});
    }
    if (kind == SweepKind::PartialZip) {
        const auto ens = std::find_if(res.rows.begin(), res.rows.end(), [](const SweepRow& r) { return r.value == 0.0; });
        if (ens != res.rows.end())
            for (const auto& r : res.rows)
                if (r.avg_task_mean > ens->avg_task_mean)
                    res.violations.push_back("stop " + csv_number(r.value, 0) + " avg_task_acc " +
                                             csv_number(r.avg_task_mean, 4) + " exceeds the ensemble's " +
                                             csv_number(ens->avg_task_mean, 4));
    }
    return res;
}

CsvTable eval_table(const EvalResult& r) {
    CsvTable t;
    t.header.push_back("joint_acc");
    for (size_t i = 0; i < r.per_task_acc.size(); ++i) t.header.push_back("task" + std::to_string(i) + "_acc");
    t.header.push_back("avg_task_acc");
    t.header.push_back("flops");
    std::vector<std::string> row{csv_number(r.joint_acc)};
    for (double a : r.per_task_acc) row.push_back(csv_number(a));
    row.push_back(csv_number(r.avg_task_acc));
    row.push_back(std::to_string(r.flops));
    t.add(std::move(row));
    return t;
}

CsvTable barrier_table(const std::vector<BarrierRow>& rows) {
    CsvTable t;
    t.header = {"gamma", "loss", "acc"};
    for (const auto& r : rows) t.add({csv_number(r.gamma, 4), csv_number(r.loss), csv_number(r.acc)});
    return t;
}

CsvTable sweep_table(const SweepResult& r) {
    CsvTable t;
    const std::string key = r.kind == SweepKind::PartialZip ? "stop" : std::string(sweep_kind_name(r.kind));
    t.header = {key, "joint_mean", "joint_std", "avg_task_mean", "avg_task_std", "flops"};
    for (const auto& row : r.rows)
        t.add({r.kind == SweepKind::Beta ? csv_number(row.value, 2) : csv_number(row.value, 0), csv_number(row.joint_mean),
               csv_number(row.joint_std), csv_number(row.avg_task_mean), csv_number(row.avg_task_std),
               std::to_string(row.flops)});
    for (const auto& v : r.violations) t.comments.push_back("violation: " + v);
    return t;
}

}  // namespace zipit
