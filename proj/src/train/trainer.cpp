#include "tml/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "tml/checkpoint.hpp"
#include "tml/eval.hpp"

namespace tml {

namespace fs = std::filesystem;

template <typename T>
LossParts<T> combined_loss(Tape<T>& tape, const Tensor<T>& o_logits, const Tensor<T>& t_logits,
                           std::span<const int> labels, double alpha) {
  if (o_logits.shape() != t_logits.shape()) {
    throw DimensionError("combined_loss: logits " + shape_str(o_logits.shape()) + " and " +
                         shape_str(t_logits.shape()) + " differ");
  }
  LossParts<T> parts;
  parts.metric = ops::cross_entropy(tape, o_logits, labels);
  parts.transformer = ops::cross_entropy(tape, t_logits, labels);
  parts.total = ops::add(tape, ops::scale(tape, parts.metric, static_cast<T>(1.0 - alpha)),
                         ops::scale(tape, parts.transformer, static_cast<T>(alpha)));
  return parts;
}

template <typename T>
Tensor<T> summed_logits_loss(Tape<T>& tape, const Tensor<T>& o_logits, const Tensor<T>& t_logits,
                             std::span<const int> labels) {
  if (o_logits.shape() != t_logits.shape()) {
    throw DimensionError("summed_logits_loss: logits " + shape_str(o_logits.shape()) + " and " +
                         shape_str(t_logits.shape()) + " differ");
  }
  return ops::cross_entropy(tape, ops::add(tape, o_logits, t_logits), labels);
}

template <typename T>
LossParts<T> training_loss(Tape<T>& tape, const typename Model<T>::Output& out, std::span<const int> labels,
                           const TrainConfig& config) {
  switch (config.combine_mode) {
    case CombineMode::weighted:
      return combined_loss(tape, out.metric_logits, out.transformer_logits, labels, config.alpha);
    case CombineMode::summed_logits: {
      LossParts<T> parts;
      parts.total = summed_logits_loss(tape, out.metric_logits, out.transformer_logits, labels);
      // Per-branch values for the log only.
      auto probe = Tape<T>::inference();
      parts.metric = ops::cross_entropy(probe, out.metric_logits.detach(), labels);
      parts.transformer = ops::cross_entropy(probe, out.transformer_logits.detach(), labels);
      return parts;
    }
    case CombineMode::metric_only: {
      LossParts<T> parts;
      parts.metric = ops::cross_entropy(tape, out.metric_logits, labels);
      parts.total = parts.metric;
      return parts;
    }
  }
  throw ConfigError("unknown combine mode");
}

double lr_at(const TrainConfig& config, int epoch) {
  int drops = 0;
  for (int d : config.lr_drop_epochs) drops += d <= epoch;
  return config.lr0 / std::pow(config.lr_drop_factor, drops);
}

template <typename T>
void sgd_step(const NamedTensors<T>& params, OptimizerState<T>& state, double lr, double momentum,
              double weight_decay) {
  if (state.velocity.empty()) {
    for (const auto& [_, p] : params) state.velocity.emplace_back(p.numel(), T(0));
  }
  if (state.velocity.size() != params.size()) throw IntegrityError("sgd_step: optimizer state does not match parameters");
  for (const auto& [name, p] : params) {
    if (!p.has_grad()) throw IntegrityError("sgd_step: parameter '" + name + "' has no gradient");
  }
  const T mu = static_cast<T>(momentum), wd = static_cast<T>(weight_decay), rate = static_cast<T>(lr);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<T> p = params[i].second;
    auto& v = state.velocity[i];
    if (v.size() != p.numel()) throw IntegrityError("sgd_step: velocity shape mismatch for " + params[i].first);
    auto values = p.data();
    auto grad = p.grad();
    for (std::size_t j = 0; j < v.size(); ++j) {
      v[j] = mu * v[j] + (grad[j] + wd * values[j]);
      values[j] -= rate * v[j];
    }
  }
  ++state.step;
  state.lr = lr;
}

namespace {

template <typename T>
double grad_norm(const Tensor<T>& t) {
  if (!t.has_grad()) return 0.0;
  double s = 0;
  for (T g : t.grad()) s += static_cast<double>(g) * static_cast<double>(g);
  return std::sqrt(s);
}

// Restores buffers, gradients and the dropout stream on scope exit.
template <typename T>
class ModelStateGuard {
 public:
  explicit ModelStateGuard(Model<T>& model)
      : model_(model), buffers_(model.buffers()), params_(model.parameters()), rng_(model.transformer().dropout_rng()) {
    for (const auto& [_, b] : buffers_) buffer_values_.push_back(b.values());
    for (const auto& [_, p] : params_) {
      grads_.push_back(p.has_grad() ? std::optional<std::vector<T>>(std::vector<T>(p.grad().begin(), p.grad().end()))
                                    : std::nullopt);
    }
  }
  ~ModelStateGuard() {
    reset_buffers();
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Tensor<T> p = params_[i].second;
      p.clear_grad();
      if (grads_[i]) p.grad_buffer() = *grads_[i];
    }
    model_.transformer().dropout_rng() = rng_;
  }
  ModelStateGuard(const ModelStateGuard&) = delete;
  ModelStateGuard& operator=(const ModelStateGuard&) = delete;

  void reset_buffers() {
    for (std::size_t i = 0; i < buffers_.size(); ++i) {
      Tensor<T> b = buffers_[i].second;
      b.values() = buffer_values_[i];
    }
  }
  void clear_grads() {
    for (auto& [_, p] : params_) {
      Tensor<T> t = p;
      t.clear_grad();
    }
  }

 private:
  Model<T>& model_;
  NamedTensors<T> buffers_;
  NamedTensors<T> params_;
  std::vector<std::vector<T>> buffer_values_;
  std::vector<std::optional<std::vector<T>>> grads_;
  Rng rng_;
};

}  // namespace

template <typename T>
IsolationReport check_branch_isolation(Model<T>& model, const Tensor<T>& images, std::span<const int> labels,
                                       double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("check_branch_isolation: alpha must lie in (0, 1)");
  ModelStateGuard<T> guard(model);
  IsolationReport r;
  std::string final_conv = "final convolution kernel";
  for (const auto& [name, p] : model.backbone().parameters()) {
    if (p.same_storage(model.backbone().final_conv_kernel())) final_conv = name;
  }

  guard.clear_grads();
  {
    Tape<T> tape;
    auto out = model.forward(tape, images, labels, true, true);
    tape.backward(ops::scale(tape, ops::cross_entropy(tape, out.transformer_logits, labels), static_cast<T>(alpha)));
  }
  for (const auto& [name, p] : model.backbone().embedding_parameters()) {
    const double n = grad_norm(p);
    r.embedding_grad_norm = std::hypot(r.embedding_grad_norm, n);
    if (n != 0.0) throw StructuralError("transformer-branch loss reaches embedding parameter '" + name + "'");
  }
  r.class_weight_grad_norm = grad_norm(model.metric_head().class_weights());
  if (r.class_weight_grad_norm != 0.0) {
    throw StructuralError("transformer-branch loss reaches metric parameter 'metric.class_weights'");
  }
  r.final_conv_grad_norm = grad_norm(model.backbone().final_conv_kernel());
  if (!(r.final_conv_grad_norm > 0.0)) {
    throw StructuralError("transformer-branch loss leaves '" + final_conv + "' without gradient");
  }

  guard.reset_buffers();
  guard.clear_grads();
  {
    Tape<T> tape;
    auto out = model.forward(tape, images, labels, true, true);
    tape.backward(
        ops::scale(tape, ops::cross_entropy(tape, out.metric_logits, labels), static_cast<T>(1.0 - alpha)));
  }
  for (const auto& [name, p] : model.transformer().parameters()) {
    const double n = grad_norm(p);
    r.encoder_grad_norm = std::hypot(r.encoder_grad_norm, n);
    if (n != 0.0) throw StructuralError("metric-branch loss reaches transformer parameter '" + name + "'");
  }
  r.metric_final_conv_grad_norm = grad_norm(model.backbone().final_conv_kernel());
  return r;
}

namespace {

std::string format_optional(const std::optional<double>& v) {
  if (!v) return "";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", *v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw DataError("cannot write " + path.string());
}

struct BatchStats {
  double min_norm = 0, max_norm = 0, mean_norm = 0;
  double metric_logit_max = 0, transformer_logit_max = 0;
};

double max_abs(const Tensor<float>& t) {
  double m = 0;
  if (!t.defined()) return m;
  for (float v : t.values()) m = std::max(m, std::abs(static_cast<double>(v)));
  return m;
}

void dump_nonfinite(const fs::path& path, int epoch, std::int64_t step, double lr, const LossParts<float>& loss,
                    const Model<float>::Output& out, std::span<const int> labels, const Model<float>& model) {
  const auto& emb = out.embedding.values;
  const std::int64_t rows = emb.dim(0), cols = emb.dim(1);
  std::vector<double> norms;
  for (std::int64_t i = 0; i < rows; ++i) {
    double s = 0;
    for (std::int64_t j = 0; j < cols; ++j) {
      const double v = emb.data()[static_cast<std::size_t>(i * cols + j)];
      s += v * v;
    }
    norms.push_back(std::sqrt(s));
  }
  nlohmann::json j;
  j["epoch"] = epoch;
  j["step"] = step;
  j["lr"] = lr;
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(std::to_string(v)); };
  j["loss_total"] = num(loss.total.item());
  j["loss_metric"] = num(loss.metric.item());
  if (loss.transformer.defined()) j["loss_transformer"] = num(loss.transformer.item());
  j["batch_size"] = labels.size();
  j["embedding_norm"] = {{"min", num(*std::min_element(norms.begin(), norms.end()))},
                         {"max", num(*std::max_element(norms.begin(), norms.end()))},
                         {"mean", num(std::accumulate(norms.begin(), norms.end(), 0.0) / static_cast<double>(rows))}};
  j["metric_logits_max_abs"] = num(max_abs(out.metric_logits));
  j["transformer_logits_max_abs"] = num(max_abs(out.transformer_logits));
  nlohmann::json bad = nlohmann::json::array();
  for (const auto& [name, p] : model.state()) {
    for (float v : p.values()) {
      if (!std::isfinite(v)) {
        bad.push_back(name);
        break;
      }
    }
  }
  j["nonfinite_tensors"] = bad;
  write_text(path, j.dump(2) + "\n");
}

}  // namespace

std::string train_log_csv(const std::vector<EpochRecord>& log) {
  std::string s = "epoch,step,lr,loss_total,loss_metric,loss_transformer,alpha,wallclock_s\n";
  char buf[256];
  for (const auto& r : log) {
    std::snprintf(buf, sizeof buf, "%d,%lld,%.9g,%.9g,%.9g,%s,%s,%.3f\n", r.epoch, static_cast<long long>(r.step), r.lr,
                  r.loss_total, r.loss_metric, format_optional(r.loss_transformer).c_str(),
                  format_optional(r.alpha).c_str(), r.wallclock_s);
    s += buf;
  }
  return s;
}

std::string verification_log_csv(const std::vector<VerificationRecord>& log) {
  std::string s = "epoch,accuracy,accuracy_std,best_threshold,tar_at_far_1e-4\n";
  char buf[256];
  for (const auto& r : log) {
    std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g,%.9g\n", r.epoch, r.accuracy, r.accuracy_std, r.best_threshold,
                  r.tar_at_far);
    s += buf;
  }
  return s;
}

TrainResult train(const data::LabeledDataset& train_set, const data::LabeledDataset& holdout, const RunConfig& config,
                  const fs::path& out_dir, std::ostream* progress) {
  config.validate();
  train_set.validate();
  if (train_set.size() < 2) throw DataError("training set needs at least 2 images");
  const auto& tc = config.train;
  const bool with_transformer = tc.combine_mode != CombineMode::metric_only;

  Model<float> model(config.model(train_set.class_count()), tc.seed);
  const nlohmann::json config_json = to_json(config);
  fs::create_directories(out_dir / "checkpoints");

  TrainResult result;
  auto save = [&](int epoch) {
    char name[32];
    std::snprintf(name, sizeof name, "epoch_%03d.tar", epoch);
    auto ck = snapshot(model, config_json, epoch);
    const fs::path path = out_dir / "checkpoints" / name;
    write_checkpoint(path, ck);
    result.checkpoints.push_back(path);
    return tensors_sha256(ck.tensors);
  };
  result.initial_hash = save(0);

  data::PairList pairs;
  const bool verify = tc.verify_every > 0 && tc.verification_pairs > 0;
  if (verify) {
    holdout.validate();
    const int n_pos = tc.verification_pairs / 2;
    pairs = data::make_pairs(holdout, static_cast<std::size_t>(n_pos),
                             static_cast<std::size_t>(tc.verification_pairs - n_pos), tc.seed);
  }

  const auto params = model.parameters(with_transformer);
  OptimizerState<float> opt;
  Rng order_rng = Rng::derive(tc.seed, "batches");
  Rng flip_rng = Rng::derive(tc.seed, "flip");
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto start = std::chrono::steady_clock::now();
  const auto batch = static_cast<std::size_t>(tc.batch_size);

  write_text(out_dir / "train_log.csv", train_log_csv(result.log));
  if (verify) write_text(out_dir / "verification_log.csv", verification_log_csv(result.verification));

  for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
    opt.epoch = epoch;
    const double lr = lr_at(tc, epoch);
    order_rng.shuffle(order.begin(), order.end());
    double sum_total = 0, sum_metric = 0, sum_transformer = 0;
    int batches = 0;
    for (std::size_t first = 0; first + 2 <= order.size(); first += batch) {
      const std::span<const std::size_t> idx(order.data() + first, std::min(batch, order.size() - first));
      auto images = data::make_batch(train_set, idx, tc.flip ? &flip_rng : nullptr);
      std::vector<int> labels;
      for (auto i : idx) labels.push_back(train_set.labels[i]);

      for (const auto& [_, p] : params) {
        Tensor<float> t = p;
        t.clear_grad();
      }
      Tape<float> tape;
      auto out = model.forward(tape, images, labels, true, with_transformer);
      auto loss = training_loss<float>(tape, out, labels, tc);
      const double total = loss.total.item();
      if (!std::isfinite(total)) {
        dump_nonfinite(out_dir / "nonfinite_dump.json", epoch, opt.step + 1, lr, loss, out, labels, model);
        throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                             std::to_string(opt.step + 1) + "; diagnostics in " +
                             (out_dir / "nonfinite_dump.json").string());
      }
      tape.backward(loss.total);
      sgd_step(params, opt, lr, tc.momentum, tc.weight_decay);
      sum_total += total;
      sum_metric += loss.metric.item();
      if (loss.transformer.defined()) sum_transformer += loss.transformer.item();
      ++batches;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.step = opt.step;
    rec.lr = lr;
    rec.loss_total = sum_total / batches;
    rec.loss_metric = sum_metric / batches;
    if (with_transformer) rec.loss_transformer = sum_transformer / batches;
    if (tc.combine_mode == CombineMode::weighted) rec.alpha = tc.alpha;
    rec.wallclock_s =
        tc.deterministic ? 0.0 : std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.log.push_back(rec);
    write_text(out_dir / "train_log.csv", train_log_csv(result.log));

    std::optional<double> accuracy;
    if (verify && (epoch % tc.verify_every == 0 || epoch == tc.epochs)) {
      auto report = eval::verification_accuracy(pairs, eval::embed_dataset(model.backbone(), holdout));
      result.verification.push_back({epoch, report.accuracy, report.accuracy_std, report.best_threshold,
                                     report.tar_at_far.empty() ? 0.0 : report.tar_at_far.front().tar});
      accuracy = report.accuracy;
      write_text(out_dir / "verification_log.csv", verification_log_csv(result.verification));
    }
    if ((tc.checkpoint_every > 0 && epoch % tc.checkpoint_every == 0) || epoch == tc.epochs) save(epoch);

    if (progress) {
      char line[256];
      std::snprintf(line, sizeof line, "epoch %d/%d lr %.4g loss %.5g (metric %.5g%s)%s\n", epoch, tc.epochs, lr,
                    rec.loss_total, rec.loss_metric,
                    rec.loss_transformer ? (", transformer " + format_optional(rec.loss_transformer)).c_str() : "",
                    accuracy ? (" holdout acc " + format_optional(accuracy)).c_str() : "");
      *progress << line << std::flush;
    }
  }
  return result;
}

#define TML_INSTANTIATE(T)                                                                                          \
  template LossParts<T> combined_loss(Tape<T>&, const Tensor<T>&, const Tensor<T>&, std::span<const int>, double); \
  template Tensor<T> summed_logits_loss(Tape<T>&, const Tensor<T>&, const Tensor<T>&, std::span<const int>);       \
  template LossParts<T> training_loss<T>(Tape<T>&, const typename Model<T>::Output&, std::span<const int>,         \
                                         const TrainConfig&);                                                       \
  template void sgd_step(const NamedTensors<T>&, OptimizerState<T>&, double, double, double);                      \
  template IsolationReport check_branch_isolation(Model<T>&, const Tensor<T>&, std::span<const int>, double);

TML_INSTANTIATE(float)
TML_INSTANTIATE(double)

}  // namespace tml
