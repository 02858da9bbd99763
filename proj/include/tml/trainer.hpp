#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "tml/config.hpp"
#include "tml/data.hpp"
#include "tml/model.hpp"

namespace tml {

template <typename T>
struct LossParts {
  Tensor<T> total;
  Tensor<T> metric;       // CE(O_Nc)
  Tensor<T> transformer;  // CE(T_Nc), undefined in metric_only mode
};

// (1 - alpha) * CE(o_logits) + alpha * CE(t_logits). Any alpha in [0, 1] is
// accepted here; TrainConfig restricts training runs to (0, 1).
template <typename T>
LossParts<T> combined_loss(Tape<T>& tape, const Tensor<T>& o_logits, const Tensor<T>& t_logits,
                           std::span<const int> labels, double alpha);

// CE(o_logits + t_logits), the summed-logits ablation.
template <typename T>
Tensor<T> summed_logits_loss(Tape<T>& tape, const Tensor<T>& o_logits, const Tensor<T>& t_logits,
                             std::span<const int> labels);

// The training loss of one step under the configured combine mode.
template <typename T>
LossParts<T> training_loss(Tape<T>& tape, const typename Model<T>::Output& out, std::span<const int> labels,
                           const TrainConfig& config);

// lr0 / factor^#{drops <= epoch}, epochs counted from 1.
double lr_at(const TrainConfig& config, int epoch);

template <typename T>
struct OptimizerState {
  std::vector<std::vector<T>> velocity;  // parallel to the parameter list
  std::int64_t step = 0;
  int epoch = 0;
  double lr = 0.0;
};

// v = momentum * v + (grad + weight_decay * p); p -= lr * v. Every parameter
// must carry a gradient (IntegrityError otherwise).
template <typename T>
void sgd_step(const NamedTensors<T>& params, OptimizerState<T>& state, double lr, double momentum,
              double weight_decay);

struct IsolationReport {
  double final_conv_grad_norm = 0.0;       // transformer-branch loss alone
  double embedding_grad_norm = 0.0;        // transformer-branch loss alone, must be 0
  double class_weight_grad_norm = 0.0;     // transformer-branch loss alone, must be 0
  double encoder_grad_norm = 0.0;          // metric-branch loss alone, must be 0
  double metric_final_conv_grad_norm = 0.0;
};

// Backpropagates alpha * CE(T_Nc) and (1 - alpha) * CE(O_Nc) separately on one
// batch and verifies the branch structure: the transformer loss reaches the
// final convolution but not L_1 or the class weights, the metric loss does not
// reach the transformer. Raises StructuralError naming a leaking parameter.
// Model buffers and gradients are left as they were found.
template <typename T>
IsolationReport check_branch_isolation(Model<T>& model, const Tensor<T>& images, std::span<const int> labels,
                                       double alpha);

struct EpochRecord {
  int epoch = 0;
  std::int64_t step = 0;
  double lr = 0.0;
  double loss_total = 0.0;
  double loss_metric = 0.0;
  std::optional<double> loss_transformer;
  std::optional<double> alpha;
  double wallclock_s = 0.0;
};

struct VerificationRecord {
  int epoch = 0;
  double accuracy = 0.0;
  double accuracy_std = 0.0;
  double best_threshold = 0.0;
  double tar_at_far = 0.0;  // at FAR 1e-4
};

struct TrainResult {
  std::vector<EpochRecord> log;
  std::vector<VerificationRecord> verification;
  std::vector<std::filesystem::path> checkpoints;
  std::string initial_hash;  // tensors_sha256 of the epoch-0 checkpoint
};

// Files under out_dir: train_log.csv, verification_log.csv and
// checkpoints/epoch_NNN.tar. A non-finite loss writes nonfinite_dump.json and
// raises NumericalError. Partial batches of fewer than 2 samples are dropped.
TrainResult train(const data::LabeledDataset& train_set, const data::LabeledDataset& holdout, const RunConfig& config,
                  const std::filesystem::path& out_dir, std::ostream* progress = nullptr);

std::string train_log_csv(const std::vector<EpochRecord>& log);
std::string verification_log_csv(const std::vector<VerificationRecord>& log);

}  // namespace tml
