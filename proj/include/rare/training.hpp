#pragma once

#include <cmath>
#include <iostream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "rare/checkpoint.hpp"
#include "rare/dataset.hpp"
#include "rare/model.hpp"
#include "rare/optimizer.hpp"

namespace rare {

/// -sum_t log p(l_t) for one sequence; one distribution per target symbol
/// (the final target is EOS).
inline double sequence_nll(const std::vector<std::vector<double>>& step_distributions,
                           const LabelSequence& target_with_eos) {
  if (step_distributions.size() != target_with_eos.size())
    throw std::invalid_argument("sequence_nll: " + std::to_string(step_distributions.size()) +
                                " distributions for " + std::to_string(target_with_eos.size()) +
                                " targets");
  double loss = 0.0;
  for (size_t t = 0; t < target_with_eos.size(); ++t)
    loss -= std::log(step_distributions[t][static_cast<size_t>(target_with_eos[t])]);
  return loss;
}

/// Teacher-forced loss recorded on the graph: ground-truth labels feed the
/// next step; EOS is appended as the final target.
template <typename S>
Value teacher_forced_nll(Graph<S>& g, const Decoder<S>& dec, const BoundParams<S>& bp,
                         const typename Decoder<S>::Context& ctx, const LabelSequence& label) {
  auto state = dec.initial_state(g, ctx);
  int prev = kSos;
  LabelSequence targets = label;
  targets.push_back(kEos);
  std::vector<Value> logps;
  logps.reserve(targets.size());
  for (int tgt : targets) {
    auto so = dec.step(g, bp, ctx, state, prev);
    logps.push_back(g.log(g.slice(so.probs, 0, tgt, 1)));
    state = so.state;
    prev = tgt;
  }
  return g.scale(g.sum(g.concat(logps, 0)), -1.0);
}

struct TrainConfig {
  int batch_size = 16;
  int epochs = 10;
  double rho = 0.95;
  double epsilon = 1e-6;
  double clip_norm = 5.0;
  uint64_t seed = 0;
  std::string preset = "desk";
  bool stn = true;
};

// ---------------------------------------------------------------------------
// checkpoint glue

template <typename S>
Checkpoint make_checkpoint(Model<S>& model, const AdadeltaState<std::type_identity_t<S>>* opt,
                           uint64_t step, const std::string& rng_state) {
  Checkpoint ck;
  ck.meta["preset"] = model.cfg.preset;
  ck.meta["stn"] = model.cfg.stn ? "1" : "0";
  ck.meta["step"] = std::to_string(step);
  ck.meta["rng"] = rng_state;
  ck.meta["dtype"] = std::to_string(dtype_tag<S>());
  auto params = model.named_params();
  for (auto& [name, t] : params) ck.tensors.push_back(to_record(name, *t));
  if (opt) {
    for (size_t i = 0; i < params.size(); ++i) {
      Tensor<S> eg2(params[i].second->shape, opt->grad_sq[i]);
      Tensor<S> edx2(params[i].second->shape, opt->update_sq[i]);
      ck.tensors.push_back(to_record("opt.eg2." + params[i].first, eg2));
      ck.tensors.push_back(to_record("opt.edx2." + params[i].first, edx2));
    }
  }
  return ck;
}

template <typename S>
void restore_params(Model<S>& model, const Checkpoint& ck, AdadeltaState<S>* opt = nullptr) {
  auto params = model.named_params();
  for (size_t i = 0; i < params.size(); ++i) {
    auto& [name, t] = params[i];
    const TensorRecord* r = ck.find(name);
    if (!r) throw std::runtime_error("checkpoint: missing tensor '" + name + "'");
    Tensor<S> loaded = from_record<S>(*r);
    if (loaded.shape != t->shape)
      throw std::runtime_error("checkpoint: tensor '" + name + "' has shape " +
                               shape_str(loaded.shape) + ", model expects " + shape_str(t->shape));
    t->values = std::move(loaded.values);
    if (opt) {
      const TensorRecord* eg2 = ck.find("opt.eg2." + name);
      const TensorRecord* edx2 = ck.find("opt.edx2." + name);
      if (eg2) opt->grad_sq[i] = from_record<S>(*eg2).values;
      if (edx2) opt->update_sq[i] = from_record<S>(*edx2).values;
    }
  }
}

template <typename S>
Model<S> load_model(const std::string& path) {
  Checkpoint ck = load_checkpoint(path);
  auto it = ck.meta.find("preset");
  if (it == ck.meta.end()) throw std::runtime_error("checkpoint: missing preset");
  ModelConfig cfg = ModelConfig::make(it->second);
  cfg.stn = ck.meta.count("stn") ? ck.meta.at("stn") == "1" : true;
  Model<S> model(cfg);
  model.init(0);
  restore_params(model, ck);
  return model;
}

// ---------------------------------------------------------------------------
// recognition and accuracy

template <typename S>
std::string greedy_recognize(const Model<S>& model, const Tensor<S>& image) {
  Graph<S> g;
  BoundParams<S> bp = model.bind(g);
  auto fw = model.forward(g, bp, g.input("image", image));
  return labels_to_string(model.dec.greedy_decode(g, bp, fw.ctx));
}

/// Exact-match word accuracy, case-insensitive alphanumeric comparison.
/// `recognize` maps an image tensor to a predicted string.
template <typename S, typename F>
double word_accuracy(const LoadedDataset<S>& data, const std::vector<int>& indices, F&& recognize) {
  if (indices.empty()) return 0.0;
  int hits = 0;
  for (int i : indices) {
    std::string pred = fold_case(recognize(data.images[static_cast<size_t>(i)]));
    if (pred == fold_case(data.samples[static_cast<size_t>(i)].label)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(indices.size());
}

// ---------------------------------------------------------------------------
// trainer

struct EpochStats {
  int epoch = 0;
  uint64_t step = 0;
  double mean_loss = 0.0;      // per-sequence objective, averaged over batches
  double per_char_loss = 0.0;  // same numerator over total target symbols
  double heldout_accuracy = 0.0;
};

/// Deterministic end-to-end trainer. One thread owns the parameters; data
/// order depends only on the seed.
template <typename S>
class Trainer {
 public:
  Trainer(Model<S>& model, const TrainConfig& cfg) : model_(model), cfg_(cfg), rng_(cfg.seed) {
    opt_.rho = cfg.rho;
    opt_.epsilon = cfg.epsilon;
    auto params = model_.named_params();
    opt_.init(params);
  }

  AdadeltaState<S>& optimizer_state() { return opt_; }
  uint64_t step_count() const { return step_; }
  std::string rng_state() const {
    std::ostringstream os;
    os << rng_.engine();
    return os.str();
  }

  /// One optimizer step over a batch of (image, label) pairs.
  /// Returns the batch loss (mean per-sequence NLL), or NaN if the step
  /// was skipped because of a non-finite gradient.
  double train_batch(const std::vector<const Tensor<S>*>& images,
                     const std::vector<const LabelSequence*>& labels) {
    auto params = model_.named_params();
    std::vector<std::vector<S>> grads;
    grads.reserve(params.size());
    double loss_value;
    // non-finite values anywhere in the pass skip the step with a report
    try {
      Graph<S> g;
      BoundParams<S> bp = model_.bind(g);
      std::vector<Value> losses;
      int total_chars = 0;
      for (size_t i = 0; i < images.size(); ++i) {
        auto fw = model_.forward(g, bp, g.input("image#" + std::to_string(i), *images[i]));
        losses.push_back(teacher_forced_nll(g, model_.dec, bp, fw.ctx, *labels[i]));
        total_chars += static_cast<int>(labels[i]->size()) + 1;
      }
      Value batch_loss =
          g.scale(g.sum(g.concat(losses, 0)), 1.0 / static_cast<double>(images.size()));
      loss_value = static_cast<double>(g.val(batch_loss).values[0]);
      last_char_count_ = total_chars;
      g.backward(batch_loss);
      for (auto& [name, t] : params) grads.push_back(g.grad(bp[name]));
    } catch (const std::runtime_error& e) {
      std::cerr << "warning: skipping step " << step_ << ": " << e.what() << "\n";
      ++step_;
      return std::numeric_limits<double>::quiet_NaN();
    }
    clip_global_norm(grads, cfg_.clip_norm);
    adadelta_step(params, grads, opt_);
    ++step_;
    return loss_value;
  }

  /// Full run over a loaded dataset; per-epoch stats via the callback.
  template <typename Callback>
  void train(const LoadedDataset<S>& data, Callback&& per_epoch) {
    if (data.train_idx.empty()) throw std::runtime_error("train: no training samples");
    std::vector<int> order = data.train_idx;
    std::vector<LabelSequence> labels;
    labels.reserve(data.samples.size());
    for (const Sample& s : data.samples) labels.push_back(string_to_labels(s.label));

    for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
      rng_.shuffle(order);
      double loss_sum = 0.0;
      double char_loss_sum = 0.0;
      int64_t chars = 0;
      int batches = 0;
      for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg_.batch_size)) {
        size_t end = std::min(order.size(), start + static_cast<size_t>(cfg_.batch_size));
        std::vector<const Tensor<S>*> images;
        std::vector<const LabelSequence*> batch_labels;
        for (size_t i = start; i < end; ++i) {
          images.push_back(&data.images[static_cast<size_t>(order[i])]);
          batch_labels.push_back(&labels[static_cast<size_t>(order[i])]);
        }
        double loss = train_batch(images, batch_labels);
        if (std::isfinite(loss)) {
          loss_sum += loss;
          char_loss_sum += loss * static_cast<double>(images.size());
          chars += last_char_count_;
          ++batches;
        }
      }
      EpochStats st;
      st.epoch = epoch;
      st.step = step_;
      st.mean_loss = batches ? loss_sum / batches : 0.0;
      st.per_char_loss = chars ? char_loss_sum / static_cast<double>(chars) : 0.0;
      st.heldout_accuracy = word_accuracy(
          data, data.heldout_idx,
          [&](const Tensor<S>& img) { return greedy_recognize(model_, img); });
      per_epoch(st);
    }
  }

 private:
  Model<S>& model_;
  TrainConfig cfg_;
  AdadeltaState<S> opt_;
  Rng rng_;
  uint64_t step_ = 0;
  int last_char_count_ = 0;
};

}  // namespace rare
