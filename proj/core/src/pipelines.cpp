#include "sfit/pipelines.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <limits>

#include "sfit/losses.hpp"
#include "sfit/optim.hpp"

namespace sfit::pipelines {
namespace {

using models::Checkpoint;
using models::Classifier;
using models::ClassifierGrads;
using models::ForwardOptions;
using models::Generator;
using models::Mode;

constexpr std::uint64_t kShuffleSalt = 1000;

/// One optimizer step over the batch `indices`; `step` counts globally.
using StepFn = std::function<void(const std::vector<std::size_t>& indices, long step, double lr)>;

/// Shuffled, tail-dropping epochs with per-step cosine learning-rate decay.
void run_epochs(const RunConfig& cfg, std::size_t n, const StepFn& step_fn,
                const std::function<void(int)>& on_epoch_end) {
  validate(cfg);
  if (cfg.epochs == 0) return;
  const auto probe = data::batch_indices(n, {cfg.batch_size, 0, false, true});
  long steps_per_epoch = static_cast<long>(probe.size());
  if (cfg.max_steps_per_epoch > 0) steps_per_epoch = std::min<long>(steps_per_epoch, cfg.max_steps_per_epoch);
  const long total = steps_per_epoch * cfg.epochs;
  long step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto plan = data::BatchPlan{cfg.batch_size, mix_seed(cfg.seed, kShuffleSalt + epoch), true, true};
    const auto order = data::batch_indices(n, plan);
    for (long s = 0; s < steps_per_epoch; ++s, ++step) {
      step_fn(order[static_cast<std::size_t>(s)], step, optim::cosine_lr(cfg.base_lr, step, total));
    }
    if (on_epoch_end) on_epoch_end(epoch);
  }
}

models::ClassifierSpec spec_for(const Tensor& images, int num_classes) {
  return {images.dim(1), images.dim(2), images.dim(3), num_classes};
}

void require_images(const Tensor& images, const char* what) {
  if (images.rank() != 4 || images.dim(0) == 0) {
    throw Error(Errc::EmptyBatch, std::string(what) + " needs a non-empty N x C x H x W image tensor");
  }
}

void check_frozen(std::uint64_t expected, const Checkpoint& now, const char* what, int epoch) {
  if (models::fingerprint(now) != expected) {
    throw Error(Errc::FrozenModelViolation, std::string(what) + " changed during epoch " + std::to_string(epoch));
  }
}

void require_same_head(const Checkpoint& a, const Checkpoint& b) {
  if (models::head_fingerprint(a) != models::head_fingerprint(b)) {
    throw Error(Errc::HeadMismatch, "source and target classifiers do not share the classifier head");
  }
}

std::vector<nn::Parameter*> adapted_parameters(Classifier& model, const RunConfig& cfg) {
  auto params = model.feature_parameters();
  if (cfg.adapt_params == "bn-affine") {
    std::erase_if(params, [](const nn::Parameter* p) { return p->name.find(".bn") == std::string::npos; });
  }
  return params;
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
  Shape shape = a.shape();
  shape[0] += b.dim(0);
  Tensor out(std::move(shape));
  std::copy(a.values().begin(), a.values().end(), out.data());
  std::copy(b.values().begin(), b.values().end(), out.data() + a.size());
  return out;
}

template <class T>
BasicTensor<T> scaled(BasicTensor<T> t, double s) {
  for (auto& v : t.values()) v = static_cast<T>(v * s);
  return t;
}

void accumulate(Tensor& dst, const Tensor& src, double weight) {
  if (dst.empty()) dst = Tensor(src.shape());
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] += static_cast<float>(weight * src[i]);
}

int count_correct(const Tensor& probs, std::span<const int> labels) {
  const auto pred = nn::argmax_rows(probs);
  int correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == labels[i];
  return correct;
}

}  // namespace

// ---------------------------------------------------------------------------

data::SyntheticManifest synthetic_manifest(const RunConfig& cfg) {
  if (cfg.mnist_dir.empty()) throw Error(Errc::InvalidConfig, "mnist_dir is required to build the synthetic pair");
  const std::filesystem::path dir = std::filesystem::absolute(cfg.mnist_dir);
  data::SyntheticManifest m;
  m.train_images = dir / "train-images-idx3-ubyte";
  m.train_labels = dir / "train-labels-idx1-ubyte";
  m.test_images = dir / "t10k-images-idx3-ubyte";
  m.test_labels = dir / "t10k-labels-idx1-ubyte";
  m.source_transform.kind = data::transform_kind_from_string(cfg.source_transform);
  m.target_transform.kind = data::transform_kind_from_string(cfg.target_transform);
  m.source_transform.amount = m.target_transform.amount = cfg.transform_amount;
  m.source_transform.seed = mix_seed(cfg.split_seed, 11);
  m.target_transform.seed = mix_seed(cfg.split_seed, 12);
  m.split_seed = cfg.split_seed;
  m.train_per_domain = cfg.train_per_domain;
  m.test_per_domain = cfg.test_per_domain;
  return m;
}

StageOutput train_source(const RunConfig& cfg, const data::ImageSet& source) {
  if (!source.labeled()) throw Error(Errc::UnlabeledData, "train_source needs labeled source data");
  source.validate();
  Classifier model(spec_for(source.images, source.num_classes));
  model.init(mix_seed(cfg.seed, 1));
  optim::Adam opt(model.parameters());
  TrainLog log(stage_name(Stage::TrainSource), cfg.seed);

  long correct = 0, seen = 0;
  run_epochs(
      cfg, static_cast<std::size_t>(source.count()),
      [&](const std::vector<std::size_t>& idx, long step, double lr) {
        const auto x = gather_rows(source.images, idx);
        std::vector<int> y;
        for (auto i : idx) y.push_back((*source.labels)[i]);
        auto out = model.forward(x, Mode::Train, {.cache = true});
        const auto ce = losses::cross_entropy(out.probs, y);
        opt.zero_grad();
        model.backward({.logits = nn::softmax_backward(out.probs, ce.grad)}, true);
        opt.step(lr);
        log.record(step, "ce", ce.value);
        correct += count_correct(out.probs, y);
        seen += static_cast<long>(y.size());
      },
      [&](int epoch) {
        log.metric(epoch, "train_accuracy", static_cast<double>(correct) / static_cast<double>(seen));
        log.set("train_accuracy", static_cast<double>(correct) / static_cast<double>(seen));
        correct = seen = 0;
      });
  log.finish();
  return {model.to_checkpoint(), std::move(log)};
}

StageOutput adapt_target_im(const RunConfig& cfg, const Checkpoint& source_ckpt, const Tensor& target_images) {
  require_images(target_images, "adapt_target_im");
  auto model = Classifier::from_checkpoint(source_ckpt);
  optim::Adam opt(adapted_parameters(model, cfg));
  TrainLog log(stage_name(Stage::AdaptTarget), cfg.seed);

  run_epochs(
      cfg, static_cast<std::size_t>(target_images.dim(0)),
      [&](const std::vector<std::size_t>& idx, long step, double lr) {
        const auto x = gather_rows(target_images, idx);
        auto out = model.forward(x, Mode::Train, {.cache = true});
        const auto ent = losses::entropy_loss(out.probs);
        const auto div = losses::diversity_loss(out.probs);
        Tensor dprobs = ent.grad;
        accumulate(dprobs, div.grad, cfg.diversity_weight);
        opt.zero_grad();
        model.backward({.logits = nn::softmax_backward(out.probs, dprobs)}, true);
        opt.step(lr);
        log.record(step, "entropy", ent.value);
        log.record(step, "diversity", div.value);
        log.record(step, "total", ent.value + cfg.diversity_weight * div.value);
      },
      {});
  auto ckpt = model.to_checkpoint();
  require_same_head(source_ckpt, ckpt);
  log.finish();
  return {std::move(ckpt), std::move(log)};
}

StageOutput adapt_target_mmd(const RunConfig& cfg, const Checkpoint& source_ckpt, const data::ImageSet& source,
                             const Tensor& target_images) {
  if (!source.labeled()) throw Error(Errc::UnlabeledData, "adapt_target_mmd needs labeled source data");
  require_images(target_images, "adapt_target_mmd");
  auto model = Classifier::from_checkpoint(source_ckpt);
  optim::Adam opt(adapted_parameters(model, cfg));
  TrainLog log(stage_name(Stage::AdaptTarget), cfg.seed);

  // Epochs walk the target set; source batches come from an independent
  // shuffled stream that wraps around.
  const auto n_source = static_cast<std::size_t>(source.count());
  std::vector<std::vector<std::size_t>> source_batches;
  std::size_t source_cursor = 0;
  int source_epoch = 0;
  auto next_source = [&]() -> const std::vector<std::size_t>& {
    if (source_cursor == source_batches.size()) {
      source_batches = data::batch_indices(
          n_source, {cfg.batch_size, mix_seed(cfg.seed, 2 * kShuffleSalt + source_epoch++), true, true});
      source_cursor = 0;
    }
    return source_batches[source_cursor++];
  };

  run_epochs(
      cfg, static_cast<std::size_t>(target_images.dim(0)),
      [&](const std::vector<std::size_t>& idx, long step, double lr) {
        const auto& sidx = next_source();
        const auto xs = gather_rows(source.images, sidx);
        const auto xt = gather_rows(target_images, idx);
        std::vector<int> ys;
        for (auto i : sidx) ys.push_back((*source.labels)[i]);
        const int bs = static_cast<int>(sidx.size()), bt = static_cast<int>(idx.size());

        auto out = model.forward(concat_rows(xs, xt), Mode::Train, {.cache = true});
        const auto probs_s = slice_rows(out.probs, 0, static_cast<std::size_t>(bs));
        const auto ce = losses::cross_entropy(probs_s, ys);
        const auto mmd = losses::mmd_poly2(slice_rows(out.pooled, 0, static_cast<std::size_t>(bs)),
                                           slice_rows(out.pooled, static_cast<std::size_t>(bs),
                                                      static_cast<std::size_t>(bs + bt)));
        Tensor dprobs(out.probs.shape());
        std::copy(ce.grad.values().begin(), ce.grad.values().end(), dprobs.data());
        Tensor dpooled = concat_rows(mmd.grad_source, mmd.grad_target);
        dpooled = scaled(std::move(dpooled), cfg.mmd_weight);

        opt.zero_grad();
        ClassifierGrads grads{.logits = nn::softmax_backward(out.probs, dprobs)};
        if (cfg.mmd_weight > 0) grads.pooled = std::move(dpooled);
        model.backward(grads, true);
        opt.step(lr);
        log.record(step, "ce", ce.value);
        log.record(step, "mmd", mmd.value);
        log.record(step, "total", ce.value + cfg.mmd_weight * mmd.value);
      },
      {});
  auto ckpt = model.to_checkpoint();
  require_same_head(source_ckpt, ckpt);
  log.finish();
  return {std::move(ckpt), std::move(log)};
}

// ---------------------------------------------------------------------------

int init_holdout_count(int n) { return std::min(256, n / 10); }

namespace {

double mean_abs_change(Generator& gen, const Tensor& images) {
  double total = 0;
  const auto n = static_cast<std::size_t>(images.dim(0));
  for (std::size_t start = 0; start < n; start += 64) {
    const auto x = slice_rows(images, start, std::min(n, start + 64));
    const auto xg = gen.forward(x, false);
    for (std::size_t i = 0; i < x.size(); ++i) total += std::abs(xg[i] - x[i]);
  }
  return total / static_cast<double>(images.size());
}

}  // namespace

StageOutput init_generator(const RunConfig& cfg, const Checkpoint& source_ckpt, const Tensor& target_images) {
  require_images(target_images, "init_generator");
  auto source = Classifier::from_checkpoint(source_ckpt);
  const auto source_fp = models::fingerprint(source_ckpt);
  Generator gen(models::GeneratorSpec{.channels = target_images.dim(1)});
  gen.init(mix_seed(cfg.seed, 2));
  optim::Adam opt(gen.parameters());
  TrainLog log(stage_name(Stage::InitGenerator), cfg.seed);

  const int n = target_images.dim(0);
  const int holdout = init_holdout_count(n);
  const auto train = slice_rows(target_images, 0, static_cast<std::size_t>(n - holdout));
  const auto held = holdout > 0 ? slice_rows(target_images, static_cast<std::size_t>(n - holdout),
                                             static_cast<std::size_t>(n))
                                : slice_rows(target_images, 0, static_cast<std::size_t>(std::min(n, 64)));

  run_epochs(
      cfg, static_cast<std::size_t>(train.dim(0)),
      [&](const std::vector<std::size_t>& idx, long step, double lr) {
        const auto x = gather_rows(train, idx);
        const auto ref = source.forward(x, Mode::Eval).pooled;
        const auto xg = gen.forward(x, true);
        auto out = source.forward(xg, Mode::Eval, {.cache = true});
        const auto id = losses::id_loss(xg, x);
        const auto content = losses::content_loss(out.pooled, ref);
        Tensor dxg = source.backward({.pooled = scaled(content.grad, cfg.content_weight)}, false);
        accumulate(dxg, id.grad, cfg.id_weight);
        opt.zero_grad();
        gen.backward(dxg, true);
        opt.step(lr);
        log.record(step, "id", id.value);
        log.record(step, "content", content.value);
        log.record(step, "total", cfg.id_weight * id.value + cfg.content_weight * content.value);
      },
      [&](int epoch) {
        check_frozen(source_fp, source.to_checkpoint(), "source model", epoch);
        log.metric(epoch, "heldout_id_error", mean_abs_change(gen, held));
      });
  log.set("heldout_id_error", mean_abs_change(gen, held));
  log.set("heldout_images", held.dim(0));
  log.finish();
  return {gen.to_checkpoint(), std::move(log)};
}

StageOutput train_sfit(const RunConfig& cfg, const Checkpoint& source_ckpt, const Checkpoint& target_ckpt,
                       const Checkpoint& generator_init, const Tensor& target_images) {
  require_images(target_images, "train_sfit");
  require_same_head(source_ckpt, target_ckpt);
  auto source = Classifier::from_checkpoint(source_ckpt);
  auto target = Classifier::from_checkpoint(target_ckpt);
  auto gen = Generator::from_checkpoint(generator_init);
  const auto source_fp = models::fingerprint(source_ckpt);
  const auto target_fp = models::fingerprint(target_ckpt);
  optim::Adam opt(gen.parameters());
  TrainLog log(stage_name(Stage::TrainSfit), cfg.seed);
  const auto& w = cfg.weights;
  const auto temp = static_cast<float>(cfg.kd_temperature);

  double epoch_total = 0;
  long epoch_steps = 0;
  run_epochs(
      cfg, static_cast<std::size_t>(target_images.dim(0)),
      [&](const std::vector<std::size_t>& idx, long step, double lr) {
        const auto x = gather_rows(target_images, idx);
        const auto tout = target.forward(x, Mode::Eval);
        const auto xg = gen.forward(x, true);
        auto sout = source.forward(xg, Mode::Eval, {.cache = true, .track_bn_inputs = w.bn > 0});

        losses::LossTerms terms;
        ClassifierGrads grads;
        if (w.kd > 0) {
          const auto ps = nn::softmax(sout.logits, temp);
          const auto kd = losses::kd_loss(nn::softmax(tout.logits, temp), ps);
          terms.kd = kd.value;
          grads.logits = scaled(nn::softmax_backward(ps, kd.grad, temp), w.kd);
        }
        if (w.rp > 0) {
          const auto rp = losses::rp_loss(tout.feature_map, sout.feature_map);
          terms.rp = rp.value;
          accumulate(grads.feature_map, rp.grad, w.rp);
        }
        if (w.style > 0) {
          const auto st = losses::style_loss(tout.feature_map, sout.feature_map);
          terms.style = st.value;
          accumulate(grads.feature_map, st.grad, w.style);
        }
        if (w.pixel > 0) {
          const auto px = losses::pixel_similarity_loss(tout.feature_map, sout.feature_map);
          terms.pixel = px.value;
          accumulate(grads.feature_map, px.grad, w.pixel);
        }
        if (w.batch > 0) {
          const auto bt = losses::batch_similarity_loss(tout.pooled, sout.pooled);
          terms.batch = bt.value;
          accumulate(grads.pooled, bt.grad, w.batch);
        }
        if (w.bn > 0) {
          std::vector<losses::BnStats<float>> batch_stats, running;
          for (const auto& s : source.bn_input_stats()) batch_stats.push_back({s.mean, s.var});
          for (const auto& s : source.bn_running_stats()) running.push_back({s.mean, s.var});
          losses::BnStatsGrad g;
          terms.bn = losses::bn_stats_loss(batch_stats, running, &g);
          const auto inputs = source.bn_inputs();
          for (std::size_t l = 0; l < inputs.size(); ++l) {
            grads.bn_inputs.push_back(
                scaled(losses::activation_stats_backward(*inputs[l], g.d_mean[l], g.d_var[l]), w.bn));
          }
        }
        const double total = losses::total_sfit_loss(w, terms);
        opt.zero_grad();
        if (!grads.logits.empty() || !grads.pooled.empty() || !grads.feature_map.empty() ||
            !grads.bn_inputs.empty()) {
          if (grads.feature_map.empty() && !grads.bn_inputs.empty() && grads.logits.empty() && grads.pooled.empty()) {
            grads.feature_map = Tensor(sout.feature_map.shape());
          }
          gen.backward(source.backward(grads, false), true);
          opt.step(lr);
        }
        if (w.kd > 0) log.record(step, "kd", terms.kd);
        if (w.rp > 0) log.record(step, "rp", terms.rp);
        if (w.style > 0) log.record(step, "style", terms.style);
        if (w.batch > 0) log.record(step, "batch", terms.batch);
        if (w.pixel > 0) log.record(step, "pixel", terms.pixel);
        if (w.bn > 0) log.record(step, "bn", terms.bn);
        log.record(step, "total", total);
        epoch_total += total;
        ++epoch_steps;
      },
      [&](int epoch) {
        check_frozen(source_fp, source.to_checkpoint(), "source model", epoch);
        check_frozen(target_fp, target.to_checkpoint(), "target model", epoch);
        log.metric(epoch, "mean_total_loss", epoch_total / static_cast<double>(std::max<long>(epoch_steps, 1)));
        epoch_total = 0;
        epoch_steps = 0;
      });
  log.finish();
  return {gen.to_checkpoint(), std::move(log)};
}

StageOutput finetune_target(const RunConfig& cfg, const Checkpoint& source_ckpt, const Checkpoint& target_ckpt,
                            const Checkpoint& generator_ckpt, const Tensor& target_images) {
  require_images(target_images, "finetune_target");
  require_same_head(source_ckpt, target_ckpt);
  auto source = Classifier::from_checkpoint(source_ckpt);
  auto target = Classifier::from_checkpoint(target_ckpt);
  auto gen = Generator::from_checkpoint(generator_ckpt);
  const auto source_fp = models::fingerprint(source_ckpt);
  const auto gen_fp = models::fingerprint(generator_ckpt);
  optim::Adam opt(target.feature_parameters());
  TrainLog log(stage_name(Stage::Finetune), cfg.seed);

  long agree = 0, seen = 0;
  run_epochs(
      cfg, static_cast<std::size_t>(target_images.dim(0)),
      [&](const std::vector<std::size_t>& idx, long step, double lr) {
        const auto x = gather_rows(target_images, idx);
        const auto ys = nn::argmax_rows(source.forward(gen.forward(x, false), Mode::Eval).probs);
        auto out = target.forward(x, Mode::Train, {.cache = true});
        const auto yt = nn::argmax_rows(out.probs);
        losses::PseudoLabelResult info;
        const auto div = losses::diversity_loss(out.probs);
        const auto pl = losses::pseudo_label_loss(out.probs, ys, yt, &info);
        Tensor dprobs = scaled(div.grad, cfg.diversity_weight);
        accumulate(dprobs, pl.grad, cfg.pseudo_weight);
        opt.zero_grad();
        target.backward({.logits = nn::softmax_backward(out.probs, dprobs)}, true);
        opt.step(lr);
        const double rate = static_cast<double>(info.agreeing) / static_cast<double>(idx.size());
        log.record(step, "diversity", div.value);
        log.record(step, "pseudo", pl.value);
        log.record(step, "agreement", rate);
        log.record(step, "total", cfg.diversity_weight * div.value + cfg.pseudo_weight * pl.value);
        agree += info.agreeing;
        seen += static_cast<long>(idx.size());
      },
      [&](int epoch) {
        check_frozen(source_fp, source.to_checkpoint(), "source model", epoch);
        check_frozen(gen_fp, gen.to_checkpoint(), "generator", epoch);
        log.metric(epoch, "agreement_rate", static_cast<double>(agree) / static_cast<double>(std::max<long>(seen, 1)));
        log.set("agreement_rate", static_cast<double>(agree) / static_cast<double>(std::max<long>(seen, 1)));
        agree = seen = 0;
      });
  auto ckpt = target.to_checkpoint();
  require_same_head(target_ckpt, ckpt);
  log.finish();
  return {std::move(ckpt), std::move(log)};
}

double classifier_accuracy(Classifier& model, const data::ImageSet& set, Generator* generator) {
  if (!set.labeled()) throw Error(Errc::UnlabeledData, "accuracy needs labels");
  const auto n = static_cast<std::size_t>(set.count());
  long correct = 0;
  for (std::size_t start = 0; start < n; start += 256) {
    const std::size_t end = std::min(n, start + 256);
    auto x = slice_rows(set.images, start, end);
    if (generator) x = generator->forward(x, false);
    const auto probs = model.forward(x, Mode::Eval).probs;
    correct += count_correct(probs, std::span<const int>(set.labels->data() + start, end - start));
  }
  return n ? static_cast<double>(correct) / static_cast<double>(n) : 0.0;
}

}  // namespace sfit::pipelines
