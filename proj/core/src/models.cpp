#include "sfit/models.hpp"

#include <cmath>
#include <map>

namespace sfit::models {
namespace {

int fc1_inputs(const ClassifierSpec& s) { return Classifier::kConv2 * (s.height / 4) * (s.width / 4); }

void write_entries(Checkpoint& ckpt, const std::vector<nn::Parameter*>& params) {
  for (const auto* p : params) ckpt.entries.push_back({p->name, p->value});
}

/// Fills `targets` from `ckpt`, rejecting missing, unknown or misshapen tensors.
void strict_load(const Checkpoint& ckpt, const std::vector<std::pair<std::string, Tensor*>>& targets) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& e : ckpt.entries) {
    if (!by_name.emplace(e.name, &e.value).second) throw Error(Errc::UnknownTensor, "duplicate tensor " + e.name);
  }
  for (const auto& [name, dst] : targets) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw Error(Errc::MissingTensor, name);
    if (it->second->shape() != dst->shape()) {
      throw Error(Errc::ShapeMismatch, name + ": checkpoint " + shape_string(it->second->shape()) + " vs model " +
                                           shape_string(dst->shape()));
    }
    *dst = *it->second;
    by_name.erase(it);
  }
  if (!by_name.empty()) throw Error(Errc::UnknownTensor, by_name.begin()->first);
}

}  // namespace

// ---------------------------------------------------------------------------
// Classifier

Classifier::Classifier(ClassifierSpec spec)
    : spec_(spec),
      conv1_("f.conv1", spec.in_channels, kConv1, 5, 1, 2, nn::Padding::Zero),
      conv2_("f.conv2", kConv1, kConv2, 5, 1, 2, nn::Padding::Zero),
      bn1_("f.bn1", kConv1),
      bn2_("f.bn2", kConv2),
      fc1_("f.fc1", fc1_inputs(spec), kFeatureDim),
      head_("p.fc", kFeatureDim, spec.num_classes) {
  if (spec.height < 16 || spec.width < 16 || spec.height % 4 || spec.width % 4) {
    throw Error(Errc::ShapeMismatch, "classifier input must be at least 16x16 and divisible by 4");
  }
}

void Classifier::init(std::uint64_t seed) {
  Rng rng(seed);
  conv1_.init(rng);
  conv2_.init(rng);
  fc1_.init(rng);
  head_.init(rng);
}

ClassifierOutput Classifier::forward(const Tensor& x, Mode mode, ForwardOptions opts) {
  if (x.rank() != 4 || x.dim(1) != spec_.in_channels || x.dim(2) != spec_.height || x.dim(3) != spec_.width) {
    throw Error(Errc::ShapeMismatch, "classifier expects (B, " + std::to_string(spec_.in_channels) + ", " +
                                         std::to_string(spec_.height) + ", " + std::to_string(spec_.width) +
                                         "), got " + shape_string(x.shape()));
  }
  const bool train = mode == Mode::Train;
  const bool c = opts.cache;
  const bool track = opts.track_bn_inputs;
  ClassifierOutput out;
  auto h = conv1_.forward(x, c);
  h = pool1_.forward(relu1_.forward(bn1_.forward(h, train, c, track), c), c);
  h = conv2_.forward(h, c);
  h = pool2_.forward(relu2_.forward(bn2_.forward(h, train, c, track), c), c);
  feature_shape_ = h.shape();
  out.feature_map = h;
  out.pooled = relu3_.forward(fc1_.forward(h, c), c);
  out.logits = head_.forward(out.pooled, c);
  out.probs = nn::softmax(out.logits);
  return out;
}

Tensor Classifier::backward(const ClassifierGrads& grads, bool param_grads) {
  Tensor d;
  if (!grads.logits.empty()) d = head_.backward(grads.logits, param_grads);
  if (!grads.pooled.empty()) {
    if (d.empty()) d = grads.pooled;
    else nn::add_inplace(d, grads.pooled);
  }
  Tensor dmap;
  if (!d.empty()) dmap = fc1_.backward(relu3_.backward(d), param_grads).reshaped(feature_shape_);
  if (!grads.feature_map.empty()) {
    if (dmap.empty()) dmap = grads.feature_map;
    else nn::add_inplace(dmap, grads.feature_map);
  }
  if (dmap.empty()) throw Error(Errc::ShapeMismatch, "classifier backward called without any gradient");
  if (!grads.bn_inputs.empty() && grads.bn_inputs.size() != 2) {
    throw Error(Errc::LayerCountMismatch, "classifier has 2 BN layers, got " + std::to_string(grads.bn_inputs.size()));
  }
  auto h = bn2_.backward(relu2_.backward(pool2_.backward(dmap)), param_grads);
  if (!grads.bn_inputs.empty()) nn::add_inplace(h, grads.bn_inputs[1]);
  h = conv2_.backward(h, param_grads);
  h = bn1_.backward(relu1_.backward(pool1_.backward(h)), param_grads);
  if (!grads.bn_inputs.empty()) nn::add_inplace(h, grads.bn_inputs[0]);
  return conv1_.backward(h, param_grads);
}

std::vector<nn::Parameter*> Classifier::feature_parameters() {
  return {&conv1_.weight(), &conv1_.bias(), &bn1_.gamma(), &bn1_.beta(), &conv2_.weight(), &conv2_.bias(),
          &bn2_.gamma(),    &bn2_.beta(),   &fc1_.weight(), &fc1_.bias()};
}

std::vector<nn::Parameter*> Classifier::head_parameters() { return {&head_.weight(), &head_.bias()}; }

std::vector<nn::Parameter*> Classifier::parameters() {
  auto all = feature_parameters();
  for (auto* p : head_parameters()) all.push_back(p);
  return all;
}

void Classifier::zero_grad() {
  for (auto* p : parameters()) p->zero_grad();
}

std::vector<nn::ChannelStats> Classifier::bn_input_stats() const { return {bn1_.input_stats(), bn2_.input_stats()}; }

std::vector<nn::ChannelStats> Classifier::bn_running_stats() const {
  auto stats = [](const nn::BatchNorm& bn) {
    auto& m = const_cast<nn::BatchNorm&>(bn);
    const auto mean = m.running_mean().value.values();
    const auto var = m.running_var().value.values();
    return nn::ChannelStats{{mean.begin(), mean.end()}, {var.begin(), var.end()}};
  };
  return {stats(bn1_), stats(bn2_)};
}

std::vector<const Tensor*> Classifier::bn_inputs() const { return {&bn1_.last_input(), &bn2_.last_input()}; }

Checkpoint Classifier::to_checkpoint() const {
  auto& self = const_cast<Classifier&>(*this);
  Checkpoint ckpt;
  write_entries(ckpt, {&self.conv1_.weight(), &self.conv1_.bias(), &self.bn1_.gamma(), &self.bn1_.beta()});
  ckpt.entries.push_back({self.bn1_.running_mean().name, self.bn1_.running_mean().value});
  ckpt.entries.push_back({self.bn1_.running_var().name, self.bn1_.running_var().value});
  write_entries(ckpt, {&self.conv2_.weight(), &self.conv2_.bias(), &self.bn2_.gamma(), &self.bn2_.beta()});
  ckpt.entries.push_back({self.bn2_.running_mean().name, self.bn2_.running_mean().value});
  ckpt.entries.push_back({self.bn2_.running_var().name, self.bn2_.running_var().value});
  write_entries(ckpt, {&self.fc1_.weight(), &self.fc1_.bias()});
  write_entries(ckpt, self.head_parameters());
  return ckpt;
}

void Classifier::load(const Checkpoint& ckpt) {
  std::vector<std::pair<std::string, Tensor*>> targets;
  for (auto* p : parameters()) targets.emplace_back(p->name, &p->value);
  for (auto* bn : {&bn1_, &bn2_}) {
    targets.emplace_back(bn->running_mean().name, &bn->running_mean().value);
    targets.emplace_back(bn->running_var().name, &bn->running_var().value);
  }
  strict_load(ckpt, targets);
}

Classifier Classifier::from_checkpoint(const Checkpoint& ckpt) {
  const Tensor* w1 = ckpt.find("f.conv1.weight");
  const Tensor* fc1 = ckpt.find("f.fc1.weight");
  const Tensor* head = ckpt.find("p.fc.weight");
  if (!w1) throw Error(Errc::MissingTensor, "f.conv1.weight");
  if (!fc1) throw Error(Errc::MissingTensor, "f.fc1.weight");
  if (!head) throw Error(Errc::MissingTensor, "p.fc.weight");
  ClassifierSpec spec;
  spec.in_channels = w1->dim(1);
  spec.num_classes = head->dim(0);
  const int cells = fc1->dim(1) / kConv2;
  const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(cells))));
  if (side * side * kConv2 != fc1->dim(1)) throw Error(Errc::ShapeMismatch, "f.fc1.weight does not match a square input");
  spec.height = spec.width = 4 * side;
  Classifier model(spec);
  model.load(ckpt);
  return model;
}

bool is_head_tensor(const std::string& name) { return name.starts_with("p."); }

std::uint64_t head_fingerprint(const Checkpoint& ckpt) {
  Checkpoint head;
  for (const auto& e : ckpt.entries) {
    if (is_head_tensor(e.name)) head.entries.push_back(e);
  }
  return fingerprint(head);
}

// ---------------------------------------------------------------------------
// Generator

Generator::Generator(GeneratorSpec spec)
    : spec_(spec), out_conv_("g.out.conv", spec.base_width, spec.channels, 7, 1, 3, nn::Padding::Reflect) {
  using nn::Padding;
  const int w = spec.base_width;
  encoder_.push_back({nn::Conv2d("g.enc0.conv", spec.channels, w, 7, 1, 3, Padding::Reflect), {}, {}});
  encoder_.push_back({nn::Conv2d("g.enc1.conv", w, 2 * w, 3, 2, 1, Padding::Reflect), {}, {}});
  encoder_.push_back({nn::Conv2d("g.enc2.conv", 2 * w, 4 * w, 3, 2, 1, Padding::Reflect), {}, {}});
  for (int i = 0; i < spec.residual_blocks; ++i) {
    const auto prefix = "g.res" + std::to_string(i);
    residual_.push_back({nn::Conv2d(prefix + ".conv1", 4 * w, 4 * w, 3, 1, 1, Padding::Reflect),
                         {},
                         {},
                         nn::Conv2d(prefix + ".conv2", 4 * w, 4 * w, 3, 1, 1, Padding::Reflect),
                         {}});
  }
  upsample_.resize(2);
  decoder_.push_back({nn::Conv2d("g.dec0.conv", 4 * w, 2 * w, 3, 1, 1, Padding::Reflect), {}, {}});
  decoder_.push_back({nn::Conv2d("g.dec1.conv", 2 * w, w, 3, 1, 1, Padding::Reflect), {}, {}});
}

void Generator::init(std::uint64_t seed) {
  Rng rng(seed);
  for (auto& b : encoder_) b.conv.init(rng);
  for (auto& r : residual_) {
    r.conv1.init(rng);
    r.conv2.init(rng);
  }
  for (auto& b : decoder_) b.conv.init(rng);
  out_conv_.init(rng);
}

Tensor Generator::forward(const Tensor& x, bool cache) {
  if (x.rank() != 4 || x.dim(1) != spec_.channels || x.dim(2) % 4 || x.dim(3) % 4 || x.dim(2) < 8 || x.dim(3) < 8) {
    throw Error(Errc::ShapeMismatch, "generator expects (B, " + std::to_string(spec_.channels) +
                                         ", H, W) with H, W divisible by 4, got " + shape_string(x.shape()));
  }
  Tensor h = x;
  for (auto& b : encoder_) h = b.relu.forward(b.norm.forward(b.conv.forward(h, cache), cache), cache);
  for (auto& r : residual_) {
    auto t = r.relu.forward(r.norm1.forward(r.conv1.forward(h, cache), cache), cache);
    t = r.norm2.forward(r.conv2.forward(t, cache), cache);
    nn::add_inplace(t, h);
    h = std::move(t);
  }
  for (std::size_t i = 0; i < decoder_.size(); ++i) {
    auto& b = decoder_[i];
    h = b.relu.forward(b.norm.forward(b.conv.forward(upsample_[i].forward(h), cache), cache), cache);
  }
  return tanh_.forward(out_conv_.forward(h, cache), cache);
}

Tensor Generator::backward(const Tensor& dy, bool param_grads) {
  auto d = out_conv_.backward(tanh_.backward(dy), param_grads);
  for (std::size_t i = decoder_.size(); i-- > 0;) {
    auto& b = decoder_[i];
    d = upsample_[i].backward(b.conv.backward(b.norm.backward(b.relu.backward(d)), param_grads));
  }
  for (std::size_t i = residual_.size(); i-- > 0;) {
    auto& r = residual_[i];
    auto t = r.conv2.backward(r.norm2.backward(d), param_grads);
    t = r.conv1.backward(r.norm1.backward(r.relu.backward(t)), param_grads);
    nn::add_inplace(d, t);
  }
  for (std::size_t i = encoder_.size(); i-- > 0;) {
    auto& b = encoder_[i];
    d = b.conv.backward(b.norm.backward(b.relu.backward(d)), param_grads);
  }
  return d;
}

std::vector<nn::Parameter*> Generator::parameters() {
  std::vector<nn::Parameter*> out;
  for (auto& b : encoder_) out.insert(out.end(), {&b.conv.weight(), &b.conv.bias()});
  for (auto& r : residual_) {
    out.insert(out.end(), {&r.conv1.weight(), &r.conv1.bias(), &r.conv2.weight(), &r.conv2.bias()});
  }
  for (auto& b : decoder_) out.insert(out.end(), {&b.conv.weight(), &b.conv.bias()});
  out.insert(out.end(), {&out_conv_.weight(), &out_conv_.bias()});
  return out;
}

void Generator::zero_grad() {
  for (auto* p : parameters()) p->zero_grad();
}

Checkpoint Generator::to_checkpoint() const {
  Checkpoint ckpt;
  write_entries(ckpt, const_cast<Generator&>(*this).parameters());
  return ckpt;
}

void Generator::load(const Checkpoint& ckpt) {
  std::vector<std::pair<std::string, Tensor*>> targets;
  for (auto* p : parameters()) targets.emplace_back(p->name, &p->value);
  strict_load(ckpt, targets);
}

Generator Generator::from_checkpoint(const Checkpoint& ckpt) {
  const Tensor* w0 = ckpt.find("g.enc0.conv.weight");
  if (!w0) throw Error(Errc::MissingTensor, "g.enc0.conv.weight");
  GeneratorSpec spec;
  spec.channels = w0->dim(1);
  spec.base_width = w0->dim(0);
  spec.residual_blocks = 0;
  while (ckpt.find("g.res" + std::to_string(spec.residual_blocks) + ".conv1.weight")) ++spec.residual_blocks;
  Generator g(spec);
  g.load(ckpt);
  return g;
}

}  // namespace sfit::models
