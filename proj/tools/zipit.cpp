#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>

#include "zipit/checkpoint.hpp"
#include "zipit/config.hpp"
#include "zipit/error.hpp"
#include "zipit/eval.hpp"
#include "zipit/stats.hpp"
#include "zipit/theorem.hpp"
#include "zipit/zip.hpp"

using namespace zipit;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum Exit { kOk = 0, kConfig = 2, kTopology = 3, kRuntime = 4 };

int fail(int code, std::string_view kind, std::string msg) {
    for (auto& ch : msg)
        if (ch == '\n' || ch == '\r') ch = ' ';
    std::cerr << "zipit: error exit=" << code << " kind=" << kind << " message=" << json(msg).dump() << "\n";
    return code;
}

std::string utc_now() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

// Shared state for one invocation: config as loaded plus flag overrides.
struct Run {
    std::string config_path;
    std::string command;
    RunConfig cfg;
    std::vector<std::string> inputs;

    void load() {
        if (!config_path.empty()) cfg = load_run_config(config_path);
    }

    // First line carries the timestamp so reruns can be compared after it.
    void stamp(CsvTable& t) const {
        std::vector<std::string> head{"zipit " + command + " generated " + utc_now(),
                                      "config " + to_json(cfg).dump()};
        if (!inputs.empty()) {
            std::string line = "inputs";
            for (const auto& i : inputs) line += " " + i;
            head.push_back(line);
        }
        t.comments.insert(t.comments.begin(), head.begin(), head.end());
    }

    void write(CsvTable t, const fs::path& path) const {
        stamp(t);
        if (path.has_parent_path()) fs::create_directories(path.parent_path());
        t.write(path);
        std::cout << "wrote " << path.string() << "\n";
    }

    fs::path out_file(const std::string& flag, const std::string& fallback) const {
        return flag.empty() ? fs::path(cfg.out) / fallback : fs::path(flag);
    }

    void note_input(const std::string& role, const std::string& path) {
        inputs.push_back(role + "=" + fs::path(path).filename().string());
    }
};

template <class T>
void override_if(CLI::Option* opt, T& dst, const T& value) {
    if (opt->count()) dst = value;
}

CsvTable log_table(const std::vector<TrainLogRow>& log) {
    CsvTable t;
    t.header = {"epoch", "loss", "acc"};
    for (const auto& r : log) t.add({std::to_string(r.epoch), csv_number(r.loss), csv_number(r.acc)});
    return t;
}

CsvTable report_table(const std::vector<ZipReportRow>& rows) {
    CsvTable t;
    t.header = {"point_id", "width", "groups", "within_merges", "cross_merges", "mean_corr", "min_corr"};
    for (const auto& r : rows)
        t.add({r.point_id, std::to_string(r.width), std::to_string(r.groups), std::to_string(r.within_merges),
               std::to_string(r.cross_merges), csv_number(r.mean_corr), csv_number(r.min_corr)});
    return t;
}

CsvTable stage_table(const std::vector<StageCorrelation>& rows) {
    CsvTable t;
    t.header = {"point_id", "mean_corr"};
    for (const auto& r : rows) t.add({r.point_id, csv_number(r.mean_corr)});
    return t;
}

int64_t resolve_stop(const ZipPlan& plan, int64_t stop) {
    if (stop == kStopFull) return plan.full_stop();
    if (stop == kStopPartial) return plan.partial_stop();
    return stop;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"zipit: merge independently trained models without retraining"};
    app.require_subcommand(1);
    Run run;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", run.config_path, "JSON run config")->check(CLI::ExistingFile);
    };

    // train
    auto* train_cmd = app.add_subcommand("train", "train a disjoint-task model pair and write its data");
    add_common(train_cmd);
    std::string train_out, arch;
    uint64_t pair_seed = 0;
    int epochs = 0;
    double lr = 0, wd = 0;
    int64_t input_dim = 0;
    train_cmd->add_option("--out", train_out, "output directory");
    auto* o_seed = train_cmd->add_option("--seed", pair_seed, "pair seed (default: first task seed)");
    auto* o_arch = train_cmd->add_option("--arch", arch, "mlp:64,64 | conv:8,16[:skip]");
    auto* o_epochs = train_cmd->add_option("--epochs", epochs);
    auto* o_lr = train_cmd->add_option("--lr", lr);
    auto* o_wd = train_cmd->add_option("--weight-decay", wd);
    auto* o_dim = train_cmd->add_option("--input-dim", input_dim);
    std::vector<int64_t> image;
    auto* o_image = train_cmd->add_option("--image", image, "C,H,W for conv models")->delimiter(',');

    // zip
    auto* zip_cmd = app.add_subcommand("zip", "zip two or more checkpoints into one multi-head model");
    add_common(zip_cmd);
    std::string zip_a, zip_b, zip_probe, zip_out, zip_report_path, algo, stop_text;
    std::vector<std::string> zip_more;
    double alpha = 0, beta = 0;
    bool repeat = false;
    zip_cmd->add_option("--a", zip_a)->required()->check(CLI::ExistingFile);
    zip_cmd->add_option("--b", zip_b)->required()->check(CLI::ExistingFile);
    zip_cmd->add_option("--more", zip_more, "further models")->check(CLI::ExistingFile);
    zip_cmd->add_option("--probe", zip_probe)->required()->check(CLI::ExistingFile);
    zip_cmd->add_option("--out", zip_out, "merged checkpoint");
    zip_cmd->add_option("--report", zip_report_path, "zip report CSV");
    auto* o_algo = zip_cmd->add_option("--match", algo, "greedy | optimal | permute | kmeans | identity");
    auto* o_alpha = zip_cmd->add_option("--alpha", alpha);
    auto* o_beta = zip_cmd->add_option("--beta", beta);
    auto* o_repeat = zip_cmd->add_flag("--repeat", repeat, "allow repeated matches");
    auto* o_stop = zip_cmd->add_option("--stop", stop_text, "full | partial | index");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint or an interpolation barrier");
    add_common(eval_cmd);
    std::string eval_model, eval_out, eval_a, eval_b, eval_probe;
    std::vector<std::string> eval_tests;
    bool barrier_mode = false;
    int64_t grid_points = 11;
    eval_cmd->add_option("--model", eval_model)->check(CLI::ExistingFile);
    eval_cmd->add_option("--test", eval_tests, "test set per head, in head order")->required()->check(CLI::ExistingFile);
    eval_cmd->add_option("--out", eval_out, "CSV path");
    eval_cmd->add_flag("--barrier", barrier_mode, "interpolate --a and --b instead");
    eval_cmd->add_option("--a", eval_a)->check(CLI::ExistingFile);
    eval_cmd->add_option("--b", eval_b)->check(CLI::ExistingFile);
    eval_cmd->add_option("--probe", eval_probe, "permute B onto A first")->check(CLI::ExistingFile);
    eval_cmd->add_option("--grid-points", grid_points)->check(CLI::Range(2, 1001));

    // sweep
    auto* sweep_cmd = app.add_subcommand("sweep", "partial-zip, beta or probe-size sweep");
    add_common(sweep_cmd);
    std::string sweep_kind, sweep_out;
    std::vector<double> sweep_grid;
    std::vector<uint64_t> sweep_seeds;
    auto* o_kind = sweep_cmd->add_option("--kind", sweep_kind, "partial_zip | beta | probe_size");
    auto* o_grid = sweep_cmd->add_option("--grid", sweep_grid)->delimiter(',');
    auto* o_sseeds = sweep_cmd->add_option("--seeds", sweep_seeds)->delimiter(',');
    auto* o_sarch = sweep_cmd->add_option("--arch", arch);
    auto* o_sepochs = sweep_cmd->add_option("--epochs", epochs);
    sweep_cmd->add_option("--out", sweep_out, "CSV path");

    // theorem
    auto* th_cmd = app.add_subcommand("theorem", "barrier of aligned two-layer ReLU nets versus width");
    add_common(th_cmd);
    std::string th_out;
    std::vector<int64_t> widths;
    int64_t th_d = 0, n_seeds = 0, probes = 0;
    double redundancy = 0;
    auto* o_widths = th_cmd->add_option("--widths", widths)->delimiter(',');
    auto* o_d = th_cmd->add_option("--d", th_d);
    auto* o_nseeds = th_cmd->add_option("--seeds", n_seeds, "seeds 0..n-1")->check(CLI::PositiveNumber);
    auto* o_red = th_cmd->add_option("--redundancy", redundancy, "r / h");
    auto* o_probes = th_cmd->add_option("--probes", probes);
    th_cmd->add_option("--out", th_out, "CSV path");

    // diag
    auto* diag_cmd = app.add_subcommand("diag", "mean matched correlation at each merge point");
    add_common(diag_cmd);
    std::string diag_a, diag_b, diag_probe, diag_out;
    diag_cmd->add_option("--a", diag_a)->required()->check(CLI::ExistingFile);
    diag_cmd->add_option("--b", diag_b)->required()->check(CLI::ExistingFile);
    diag_cmd->add_option("--probe", diag_probe)->required()->check(CLI::ExistingFile);
    diag_cmd->add_option("--out", diag_out, "CSV path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return fail(kConfig, "config", e.what());
    }

    try {
        run.load();
        auto& ex = run.cfg.experiment;

        if (*train_cmd) {
            run.command = "train";
            if (o_arch->count()) ex.train.arch = Arch::parse(arch);
            override_if(o_epochs, ex.train.epochs, epochs);
            override_if(o_lr, ex.train.lr, lr);
            override_if(o_wd, ex.train.weight_decay, wd);
            override_if(o_dim, ex.input_dim, input_dim);
            override_if(o_image, ex.image, image);
            if (!train_out.empty()) run.cfg.out = train_out;
            const uint64_t seed = o_seed->count() ? pair_seed : ex.seeds.front();
            ex.seeds = {seed};
            run.cfg.validate();
            const TaskPair pair = make_task_pair(ex, seed);
            const fs::path dir(run.cfg.out);
            fs::create_directories(dir);
            const char* names[2] = {"a", "b"};
            for (size_t t = 0; t < 2; ++t) {
                const std::string n = names[t];
                save_checkpoint(pair.models[t], dir / (n + ".ckpt"));
                save_dataset(pair.train[t], dir / ("train_" + n + ".zds"));
                save_dataset(pair.test[t], dir / ("test_" + n + ".zds"));
                run.write(log_table(pair.logs[t]), dir / ("train_log_" + n + ".csv"));
            }
            save_dataset(pair.probe, dir / "probe.zds");
            std::cout << "wrote " << dir.string() << "/{a,b}.ckpt and datasets\n";
            return kOk;
        }

        if (*zip_cmd) {
            run.command = "zip";
            if (o_algo->count()) ex.match.algorithm = algorithm_from_name(algo);
            override_if(o_alpha, ex.match.alpha, alpha);
            override_if(o_beta, ex.match.beta, beta);
            override_if(o_repeat, ex.match.repeat_matches, repeat);
            if (o_stop->count()) run.cfg.stop = parse_stop(stop_text);
            run.cfg.validate();
            std::vector<std::string> paths{zip_a, zip_b};
            paths.insert(paths.end(), zip_more.begin(), zip_more.end());
            std::vector<ModelGraph> models;
            for (size_t i = 0; i < paths.size(); ++i) {
                models.push_back(load_checkpoint(paths[i]));
                if (!models.back().meta.count("tag")) models.back().meta["tag"] = "m" + std::to_string(i);
                run.note_input("model" + std::to_string(i), paths[i]);
            }
            const Dataset probe = load_dataset(zip_probe);
            run.note_input("probe", zip_probe);
            ZipPlan plan = plan_zip(models);
            plan.match_cfg = ex.match;
            plan.set_stop(resolve_stop(plan, run.cfg.stop));
            const MergedModel m = models.size() > 2 ? zip_many(models, plan, probe) : zip(models, plan, probe);
            const fs::path out = run.out_file(zip_out, "merged.ckpt");
            if (out.has_parent_path()) fs::create_directories(out.parent_path());
            save_checkpoint(m.graph, out, m.records());
            std::cout << "wrote " << out.string() << "\n";
            const fs::path report =
                zip_report_path.empty() ? (out.has_parent_path() ? out.parent_path() : fs::path(".")) / "zip-report.csv"
                                        : fs::path(zip_report_path);
            run.write(report_table(zip_report(m)), report);
            return kOk;
        }

        if (*eval_cmd) {
            run.command = "eval";
            run.cfg.validate();
            std::vector<Dataset> tests;
            for (const auto& p : eval_tests) {
                tests.push_back(load_dataset(p));
                run.note_input("test", p);
            }
            if (barrier_mode) {
                if (eval_a.empty() || eval_b.empty()) throw ConfigError("--barrier needs --a and --b");
                if (tests.size() != 2) throw ConfigError("--barrier needs one test set per model");
                const ModelGraph a = load_checkpoint(eval_a);
                ModelGraph b = load_checkpoint(eval_b);
                run.note_input("a", eval_a);
                run.note_input("b", eval_b);
                if (!eval_probe.empty()) {
                    b = permute_onto(a, b, load_dataset(eval_probe));
                    run.note_input("probe", eval_probe);
                }
                std::vector<BarrierTask> tasks{{tests[0], HeadSource::FromA}, {tests[1], HeadSource::FromB}};
                std::vector<double> grid;
                for (int64_t i = 0; i < grid_points; ++i)
                    grid.push_back(static_cast<double>(i) / static_cast<double>(grid_points - 1));
                run.write(barrier_table(barrier_curve(a, b, tasks, grid)), run.out_file(eval_out, "barrier.csv"));
                return kOk;
            }
            if (eval_model.empty()) throw ConfigError("eval needs --model (or --barrier with --a/--b)");
            const ModelGraph model = load_checkpoint(eval_model);
            run.note_input("model", eval_model);
            if (model.heads.size() != tests.size())
                throw ConfigError("model has " + std::to_string(model.heads.size()) + " heads but " +
                                  std::to_string(tests.size()) + " test sets were given");
            std::vector<TaskData> tasks;
            for (size_t i = 0; i < tests.size(); ++i) tasks.push_back({tests[i], model.heads[i]});
            run.write(eval_table(evaluate(model, tasks)), run.out_file(eval_out, "eval.csv"));
            return kOk;
        }

        if (*sweep_cmd) {
            run.command = "sweep";
            override_if(o_kind, run.cfg.sweep_kind, sweep_kind);
            override_if(o_grid, run.cfg.sweep_grid, sweep_grid);
            override_if(o_sseeds, ex.seeds, sweep_seeds);
            if (o_sarch->count()) ex.train.arch = Arch::parse(arch);
            override_if(o_sepochs, ex.train.epochs, epochs);
            run.cfg.validate();
            const SweepKind kind = sweep_kind_from_name(run.cfg.sweep_kind);
            const auto grid = run.cfg.sweep_grid.empty() ? default_sweep_grid(kind, ex) : run.cfg.sweep_grid;
            const SweepResult r = sweep(kind, grid, ex);
            for (const auto& v : r.violations) std::cerr << "zipit: warning " << v << "\n";
            run.write(sweep_table(r), run.out_file(sweep_out, "sweep_" + std::string(sweep_kind_name(kind)) + ".csv"));
            return kOk;
        }

        if (*th_cmd) {
            run.command = "theorem";
            auto& th = run.cfg.theorem;
            override_if(o_widths, run.cfg.theorem_widths, widths);
            override_if(o_d, th.d, th_d);
            if (o_nseeds->count()) {
                th.seeds.clear();
                for (int64_t s = 0; s < n_seeds; ++s) th.seeds.push_back(static_cast<uint64_t>(s));
            }
            override_if(o_red, th.redundancy, redundancy);
            override_if(o_probes, th.probes, probes);
            run.cfg.validate();
            run.write(theorem_table(width_trend(run.cfg.theorem_widths, th)), run.out_file(th_out, "theorem.csv"));
            return kOk;
        }

        if (*diag_cmd) {
            run.command = "diag";
            run.cfg.validate();
            std::vector<ModelGraph> models{load_checkpoint(diag_a), load_checkpoint(diag_b)};
            run.note_input("a", diag_a);
            run.note_input("b", diag_b);
            const Dataset probe = load_dataset(diag_probe);
            run.note_input("probe", diag_probe);
            const ZipPlan plan = plan_zip(models);
            std::vector<std::string> points;
            for (const auto& p : plan.merge_points) points.push_back(p.id);
            run.write(stage_table(stage_correlation_report(models[0], models[1], probe, points)),
                      run.out_file(diag_out, "stage_corr.csv"));
            return kOk;
        }
    } catch (const ConfigError& e) {
        return fail(kConfig, "config", e.what());
    } catch (const TopologyError& e) {
        return fail(kTopology, "topology", e.what());
    } catch (const ShapeError& e) {
        return fail(kTopology, "shape", e.what());
    } catch (const FormatError& e) {
        std::string code(format_errc_name(e.code()));
        std::replace(code.begin(), code.end(), ' ', '_');
        return fail(kRuntime, "format." + code, e.what());
    } catch (const NumericError& e) {
        return fail(kRuntime, "numeric", e.what());
    } catch (const std::exception& e) {
        return fail(kRuntime, "runtime", e.what());
    }
    return kOk;
}
