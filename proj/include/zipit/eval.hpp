#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "zipit/csv.hpp"
#include "zipit/data.hpp"
#include "zipit/train.hpp"
#include "zipit/zip.hpp"

namespace zipit {

struct TaskData {
    Dataset data;      // labels local to the head
    std::string head;
};

struct EvalResult {
    double joint_acc = 0.0;
    std::vector<double> per_task_acc;
    double avg_task_acc = 0.0;
    int64_t flops = 0;
    std::map<std::string, std::string> meta;
};

// Per-task accuracy of each head on its own data; joint accuracy over the
// union of all rows, predicting the argmax of the concatenated per-head
// softmax against labels offset into the concatenated class space.
EvalResult evaluate(const ModelGraph& model, std::span<const TaskData> tasks);
// Head h of the merged model (its first) is paired with tasks[h].
EvalResult evaluate(const MergedModel& m, std::span<const Dataset> tasks);

double cross_entropy(const Tensor& logits, std::span<const int32_t> labels);

enum class HeadSource { Interpolate, FromA, FromB };

struct BarrierTask {
    Dataset data;
    HeadSource head = HeadSource::Interpolate;
};

struct BarrierRow {
    double gamma;
    double loss;  // mean over tasks
    double acc;   // mean over tasks
};

// gamma * A + (1 - gamma) * B at each grid point with batch norms reset on
// the union of the task inputs. Heads listed as FromA / FromB keep that
// model's head parameters instead of interpolating them.
std::vector<BarrierRow> barrier_curve(const ModelGraph& a, const ModelGraph& b_aligned,
                                      std::span<const BarrierTask> tasks, const std::vector<double>& grid);

// B with every hidden space permuted onto A by linear sum assignment of
// activation correlations (the permute baseline in weight space).
ModelGraph permute_onto(const ModelGraph& a, const ModelGraph& b, const Dataset& probe);

// Two disjoint-task models trained from different seeds, with their data.
struct ExperimentConfig {
    int64_t classes_per_task = 5;
    int64_t input_dim = 8;
    std::vector<int64_t> image;  // set for conv models
    int64_t samples_per_class = 100;
    int64_t test_per_class = 100;
    int64_t probe_size = kDefaultProbeSize;
    uint64_t data_seed = 0;
    std::vector<uint64_t> seeds{0, 1, 2, 3, 4};
    TrainConfig train;
    MatchConfig match;

    void validate() const;
};

struct TaskPair {
    std::vector<ModelGraph> models;  // A, B
    std::vector<Dataset> train;      // per task
    std::vector<Dataset> test;       // per task
    Dataset probe;                   // drawn from the union of both training sets
    std::vector<std::vector<TrainLogRow>> logs;
};

TaskPair make_task_pair(const ExperimentConfig& cfg, uint64_t seed);
Dataset make_probe(std::span<const Dataset> train_sets, int64_t size, uint64_t seed);

enum class Method { Ensemble, ZipPartial, ZipFull, Permute, WeightAvg };
std::string_view method_name(Method m);

// Merges the pair with the method and evaluates it on the tests sets.
EvalResult run_method(const TaskPair& pair, Method method, const MatchConfig& zip_cfg);

struct MethodSummary {
    Method method;
    double joint_mean, joint_std;
    double avg_task_mean, avg_task_std;
    int64_t flops;
};
std::vector<MethodSummary> compare_methods(const ExperimentConfig& cfg, std::span<const Method> methods);

enum class SweepKind { PartialZip, Beta, ProbeSize };
SweepKind sweep_kind_from_name(std::string_view name);
std::string_view sweep_kind_name(SweepKind k);

struct SweepRow {
    double value;
    double joint_mean, joint_std;
    double avg_task_mean, avg_task_std;
    int64_t flops;
};

struct SweepResult {
    SweepKind kind;
    std::vector<SweepRow> rows;
    // Rows whose mean per-task accuracy beats the ensemble row (partial-zip
    // sweeps only; the ensemble is expected to dominate).
    std::vector<std::string> violations;
};

// Default grids: stop indices, {0, 0.2, ..., 1.0}, {16, 64, 256, 1024}.
std::vector<double> default_sweep_grid(SweepKind kind, const ExperimentConfig& cfg);
SweepResult sweep(SweepKind kind, const std::vector<double>& grid, const ExperimentConfig& cfg);

CsvTable eval_table(const EvalResult& r);
CsvTable barrier_table(const std::vector<BarrierRow>& rows);
CsvTable sweep_table(const SweepResult& r);

}  // namespace zipit
