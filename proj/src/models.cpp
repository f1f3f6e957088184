#include "dmmia/models.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "dmmia/errors.hpp"
#include "dmmia/linalg.hpp"
#include "dmmia/rng.hpp"

namespace dmmia {
namespace {

// W ~ N(0, 1/sqrt(fan_in)) row-major, b = 0.
Tensor init_weight(Rng& rng, Index out, Index in, bool requires_grad) {
  Arr a(out * in);
  const double sd = 1.0 / std::sqrt(static_cast<double>(in));
  for (Index i = 0; i < a.size(); ++i) a[i] = rng.normal(0.0, sd);
  return Tensor::from_array({out, in}, std::move(a), requires_grad);
}

Tensor init_bias(Index out, bool requires_grad) {
  return Tensor::zeros({out}, requires_grad);
}

std::string join_widths(const std::vector<Index>& widths) {
  std::ostringstream os;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    if (i) os << ',';
    os << widths[i];
  }
  return os.str();
}

std::vector<Index> parse_widths(const std::string& s) {
  std::vector<Index> out;
  std::istringstream is(s);
  std::string tok;
  while (std::getline(is, tok, ',')) {
    try {
      out.push_back(static_cast<Index>(std::stoll(tok)));
    } catch (const std::exception&) {
      throw ParseError("checkpoint: bad widths entry '" + tok + "'");
    }
  }
  if (out.size() < 2) throw ParseError("checkpoint: widths '" + s + "' needs at least two entries");
  return out;
}

Mat rows_of(const Mat& m, const std::vector<Index>& idx, Index begin, Index end) {
  Mat out(end - begin, m.cols());
  for (Index r = begin; r < end; ++r) out.row(r - begin) = m.row(idx[r]);
  return out;
}

double accuracy(const std::vector<int>& pred, const std::vector<int>& labels,
                const std::vector<Index>& idx, Index begin, Index end) {
  if (end <= begin) return 0.0;
  Index hit = 0;
  for (Index r = begin; r < end; ++r)
    if (pred[r - begin] == labels[idx[r]]) ++hit;
  return static_cast<double>(hit) / static_cast<double>(end - begin);
}

}  // namespace

// --- Classifier --------------------------------------------------------------

Classifier::Classifier(std::vector<Index> widths, std::uint64_t seed)
    : widths_(std::move(widths)) {
  if (widths_.size() < 2)
    throw ContractError("Classifier: widths needs at least input and output sizes");
  for (Index w : widths_)
    if (w < 1) throw ContractError("Classifier: every width must be >= 1");
  Rng rng(seed);
  for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
    w_.push_back(init_weight(rng, widths_[l + 1], widths_[l], true));
    b_.push_back(init_bias(widths_[l + 1], true));
  }
}

std::pair<Tensor, Tensor> Classifier::features_logits(const Tensor& x) const {
  if (x.rank() != 2 || x.cols() != in_dim())
    throw ShapeError("Classifier::forward: input must be (n x " +
                     std::to_string(in_dim()) + ")");
  Tensor h = x;
  for (std::size_t l = 0; l + 1 < w_.size(); ++l)
    h = relu(affine(h, w_[l], b_[l]));
  Tensor out = affine(h, w_.back(), b_.back());
  return {h, out};
}

Tensor Classifier::logits(const Tensor& x) const { return features_logits(x).second; }
Tensor Classifier::features(const Tensor& x) const { return features_logits(x).first; }

Mat Classifier::probs_of(const Mat& images) const {
  Tensor x = Tensor::from_matrix(images);
  Tensor p = softmax(logits(x));
  Mat out(images.rows(), n_classes());
  ConstMatMap view(p.value().data(), images.rows(), n_classes());
  out = view;
  return out;
}

Mat Classifier::features_of(const Mat& images) const {
  Tensor x = Tensor::from_matrix(images);
  Tensor f = features(x);
  Mat out(images.rows(), feature_dim());
  ConstMatMap view(f.value().data(), images.rows(), feature_dim());
  out = view;
  return out;
}

std::vector<int> Classifier::predict(const Mat& images) const {
  Mat p = probs_of(images);
  std::vector<int> out(static_cast<std::size_t>(p.rows()));
  for (Index r = 0; r < p.rows(); ++r) {
    int best = 0;
    for (Index c = 1; c < p.cols(); ++c)
      if (p(r, c) > p(r, best)) best = static_cast<int>(c);
    out[static_cast<std::size_t>(r)] = best;
  }
  return out;
}

std::vector<Tensor> Classifier::params() const {
  std::vector<Tensor> ps;
  for (std::size_t l = 0; l < w_.size(); ++l) {
    ps.push_back(w_[l]);
    ps.push_back(b_[l]);
  }
  return ps;
}

void Classifier::set_requires_grad(bool b) {
  for (auto& t : w_) t.set_requires_grad(b);
  for (auto& t : b_) t.set_requires_grad(b);
}

Checkpoint Classifier::to_checkpoint() const {
  Checkpoint ck;
  ck.metadata["kind"] = ("classifier");
  ck.metadata["widths"] = (join_widths(widths_));
  for (std::size_t l = 0; l < w_.size(); ++l) {
    ck.add("layer" + std::to_string(l) + ".w", w_[l]);
    ck.add("layer" + std::to_string(l) + ".b", b_[l]);
  }
  return ck;
}

Classifier Classifier::from_checkpoint(const Checkpoint& ck) {
  if (ck.meta_or("kind", "") != "classifier")
    throw ParseError("checkpoint: kind '" + ck.meta_or("kind", "<missing>") +
                     "' is not a classifier");
  Classifier c;
  c.widths_ = parse_widths(ck.meta("widths"));
  for (std::size_t l = 0; l + 1 < c.widths_.size(); ++l) {
    const std::string base = "layer" + std::to_string(l);
    c.w_.push_back(ck.get_checked(base + ".w", {c.widths_[l + 1], c.widths_[l]}));
    c.b_.push_back(ck.get_checked(base + ".b", {c.widths_[l + 1]}));
  }
  c.set_requires_grad(false);
  return c;
}

// --- training ----------------------------------------------------------------

std::pair<Classifier, TrainReport> train_classifier(const Dataset& ds,
                                                    std::vector<Index> hidden,
                                                    const TrainConfig& cfg) {
  ds.validate();
  if (cfg.epochs < 1) throw ContractError("train_classifier: epochs must be >= 1");
  if (cfg.batch_size < 1) throw ContractError("train_classifier: batch_size must be >= 1");
  if (cfg.holdout_fraction < 0.0 || cfg.holdout_fraction >= 1.0)
    throw ContractError("train_classifier: holdout_fraction must be in [0,1)");

  const int k = ds.label_max() + 1;
  if (cfg.expected_classes >= 1 && k != cfg.expected_classes)
    throw ContractError("train_classifier: dataset has " + std::to_string(k) +
                        " classes but " + std::to_string(cfg.expected_classes) +
                        " were expected");

  std::vector<Index> widths;
  widths.push_back(ds.pixels_per_image());
  widths.insert(widths.end(), hidden.begin(), hidden.end());
  widths.push_back(static_cast<Index>(k));
  Classifier clf(widths, mix_seed(cfg.seed, 0));

  Rng shuffle_rng(mix_seed(cfg.seed, 1));
  const Index n = ds.n();
  std::vector<Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), Index{0});
  shuffle_rng.shuffle(idx);
  Index n_hold = static_cast<Index>(std::llround(cfg.holdout_fraction * static_cast<double>(n)));
  if (n_hold >= n) n_hold = n - 1;
  const Index n_train = n - n_hold;

  AdamConfig acfg;
  acfg.lr = cfg.lr;
  acfg.beta1 = cfg.beta1;
  acfg.beta2 = cfg.beta2;
  Adam opt(clf.params(), acfg);

  std::vector<Index> order(idx.begin(), idx.begin() + n_train);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    for (Index start = 0; start < n_train; start += cfg.batch_size) {
      const Index stop = std::min(n_train, start + cfg.batch_size);
      Mat xb(stop - start, ds.pixels_per_image());
      std::vector<int> yb(static_cast<std::size_t>(stop - start));
      for (Index r = start; r < stop; ++r) {
        xb.row(r - start) = ds.pixels.row(order[r]);
        yb[static_cast<std::size_t>(r - start)] = ds.labels[static_cast<std::size_t>(order[r])];
      }
      try {
        Tensor loss = cross_entropy(clf.logits(Tensor::from_matrix(xb)), yb);
        backward(loss);
        opt.step();
        opt.zero_grad();
      } catch (const NumericalError& e) {
        throw NumericalError("train_classifier: epoch " + std::to_string(epoch) +
                             ": " + e.what());
      }
    }
  }

  TrainReport report;
  report.epochs = cfg.epochs;
  {
    Mat xt = rows_of(ds.pixels, idx, 0, n_train);
    std::vector<int> yt(static_cast<std::size_t>(n_train));
    for (Index r = 0; r < n_train; ++r) yt[static_cast<std::size_t>(r)] = ds.labels[static_cast<std::size_t>(idx[r])];
    report.train_acc = accuracy(clf.predict(xt), ds.labels, idx, 0, n_train);
    Tensor loss = cross_entropy(clf.logits(Tensor::from_matrix(xt)), yt);
    report.final_loss = loss.item();
  }
  if (n_hold > 0) {
    Mat xh = rows_of(ds.pixels, idx, n_train, n);
    report.holdout_acc = accuracy(clf.predict(xh), ds.labels, idx, n_train, n);
  } else {
    report.holdout_acc = report.train_acc;
  }
  return {std::move(clf), report};
}

// --- generator ---------------------------------------------------------------

MappingNetwork::MappingNetwork(Index z_dim, Index w_dim, std::uint64_t seed)
    : z_dim_(z_dim), w_dim_(w_dim) {
  if (z_dim < 1 || w_dim < 1)
    throw ContractError("MappingNetwork: z_dim and w_dim must be >= 1");
  Rng rng(seed);
  w1_ = init_weight(rng, w_dim, z_dim, true);
  b1_ = init_bias(w_dim, true);
  w2_ = init_weight(rng, w_dim, w_dim, true);
  b2_ = init_bias(w_dim, true);
}

Tensor MappingNetwork::forward(const Tensor& z) const {
  if (z.rank() != 2 || z.cols() != z_dim_)
    throw ShapeError("MappingNetwork::forward: input must be (n x " +
                     std::to_string(z_dim_) + ")");
  Tensor h = tanh(affine(z, w1_, b1_));
  return tanh(affine(h, w2_, b2_));
}

void MappingNetwork::set_requires_grad(bool b) {
  w1_.set_requires_grad(b);
  b1_.set_requires_grad(b);
  w2_.set_requires_grad(b);
  b2_.set_requires_grad(b);
}

SynthesisNetwork::SynthesisNetwork(Index w_dim, Index hidden, Index out_dim,
                                   std::uint64_t seed)
    : w_dim_(w_dim), hidden_(hidden), out_dim_(out_dim) {
  if (w_dim < 1 || hidden < 1 || out_dim < 1)
    throw ContractError("SynthesisNetwork: all dimensions must be >= 1");
  Rng rng(seed);
  w1_ = init_weight(rng, hidden, w_dim, true);
  b1_ = init_bias(hidden, true);
  w2_ = init_weight(rng, out_dim, hidden, true);
  b2_ = init_bias(out_dim, true);
}

Tensor SynthesisNetwork::forward(const Tensor& w) const {
  if (w.rank() != 2 || w.cols() != w_dim_)
    throw ShapeError("SynthesisNetwork::forward: input must be (n x " +
                     std::to_string(w_dim_) + ")");
  Tensor h = relu(affine(w, w1_, b1_));
  return sigmoid(affine(h, w2_, b2_));
}

void SynthesisNetwork::set_requires_grad(bool b) {
  w1_.set_requires_grad(b);
  b1_.set_requires_grad(b);
  w2_.set_requires_grad(b);
  b2_.set_requires_grad(b);
}

Generator::Generator(MappingNetwork mapping, SynthesisNetwork synthesis)
    : mapping_(std::move(mapping)), synthesis_(std::move(synthesis)) {
  if (mapping_.w_dim() != synthesis_.w_dim())
    throw ShapeError("Generator: mapping w_dim " + std::to_string(mapping_.w_dim()) +
                     " does not match synthesis w_dim " +
                     std::to_string(synthesis_.w_dim()));
}

Tensor Generator::decode(const Tensor& z) const {
  return synthesis_.forward(mapping_.forward(z));
}

Mat Generator::decode_values(const Mat& z) const {
  Tensor x = decode(Tensor::from_matrix(z));
  Mat out(z.rows(), synthesis_.out_dim());
  ConstMatMap view(x.value().data(), z.rows(), synthesis_.out_dim());
  out = view;
  return out;
}

void Generator::reinit_mapping(std::uint64_t seed) {
  mapping_ = MappingNetwork(mapping_.z_dim(), mapping_.w_dim(), seed);
}

std::uint64_t Generator::synthesis_checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const Tensor& t : synthesis_.params()) {
    const Arr& v = t.value();
    h = fnv1a(reinterpret_cast<const unsigned char*>(v.data()),
              static_cast<std::size_t>(v.size()) * sizeof(double), h);
  }
  return h;
}

Checkpoint Generator::to_checkpoint() const {
  Checkpoint ck;
  ck.metadata["kind"] = ("generator");
  ck.metadata["z_dim"] = (std::to_string(mapping_.z_dim()));
  ck.metadata["w_dim"] = (std::to_string(mapping_.w_dim()));
  ck.metadata["hidden"] = (std::to_string(synthesis_.hidden()));
  ck.metadata["out_dim"] = (std::to_string(synthesis_.out_dim()));
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(synthesis_checksum()));
  ck.metadata["synthesis_checksum"] = (buf);
  ck.add("mapping.w1", mapping_.w1_);
  ck.add("mapping.b1", mapping_.b1_);
  ck.add("mapping.w2", mapping_.w2_);
  ck.add("mapping.b2", mapping_.b2_);
  ck.add("synthesis.w1", synthesis_.w1_);
  ck.add("synthesis.b1", synthesis_.b1_);
  ck.add("synthesis.w2", synthesis_.w2_);
  ck.add("synthesis.b2", synthesis_.b2_);
  return ck;
}

Generator Generator::from_checkpoint(const Checkpoint& ck) {
  if (ck.meta_or("kind", "") != "generator")
    throw ParseError("checkpoint: kind '" + ck.meta_or("kind", "<missing>") +
                     "' is not a generator");
  const Index z_dim = static_cast<Index>(std::stoll(ck.meta("z_dim")));
  const Index w_dim = static_cast<Index>(std::stoll(ck.meta("w_dim")));
  const Index hidden = static_cast<Index>(std::stoll(ck.meta("hidden")));
  const Index out_dim = static_cast<Index>(std::stoll(ck.meta("out_dim")));
  MappingNetwork m;
  m.z_dim_ = z_dim;
  m.w_dim_ = w_dim;
  m.w1_ = ck.get_checked("mapping.w1", {w_dim, z_dim});
  m.b1_ = ck.get_checked("mapping.b1", {w_dim});
  m.w2_ = ck.get_checked("mapping.w2", {w_dim, w_dim});
  m.b2_ = ck.get_checked("mapping.b2", {w_dim});
  m.set_requires_grad(true);
  SynthesisNetwork s;
  s.w_dim_ = w_dim;
  s.hidden_ = hidden;
  s.out_dim_ = out_dim;
  s.w1_ = ck.get_checked("synthesis.w1", {hidden, w_dim});
  s.b1_ = ck.get_checked("synthesis.b1", {hidden});
  s.w2_ = ck.get_checked("synthesis.w2", {out_dim, hidden});
  s.b2_ = ck.get_checked("synthesis.b2", {out_dim});
  s.set_requires_grad(false);
  return Generator(std::move(m), std::move(s));
}

// --- pretraining -------------------------------------------------------------

namespace {

std::pair<Generator, PretrainReport> pretrain_autoencoder(
    const Dataset& ds, const GeneratorTrainConfig& cfg) {
  const Index d = ds.pixels_per_image();
  Rng enc_rng(mix_seed(cfg.seed, 0));
  Tensor we1 = init_weight(enc_rng, cfg.hidden, d, true);
  Tensor be1 = init_bias(cfg.hidden, true);
  Tensor we2 = init_weight(enc_rng, cfg.w_dim, cfg.hidden, true);
  Tensor be2 = init_bias(cfg.w_dim, true);
  SynthesisNetwork dec(cfg.w_dim, cfg.hidden, d, mix_seed(cfg.seed, 1));

  auto encode = [&](const Tensor& x) {
    Tensor h = relu(affine(x, we1, be1));
    return tanh(affine(h, we2, be2));
  };

  std::vector<Tensor> params{we1, be1, we2, be2};
  for (const Tensor& t : dec.params()) params.push_back(t);
  AdamConfig acfg;
  acfg.lr = cfg.lr;
  Adam opt(params, acfg);

  Rng shuffle_rng(mix_seed(cfg.seed, 3));
  const Index n = ds.n();
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  double last_loss = 0.0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    for (Index start = 0; start < n; start += cfg.batch_size) {
      const Index stop = std::min(n, start + cfg.batch_size);
      Mat xb(stop - start, d);
      for (Index r = start; r < stop; ++r) xb.row(r - start) = ds.pixels.row(order[r]);
      try {
        Tensor x = Tensor::from_matrix(xb);
        Tensor diff = sub(dec.forward(encode(x)), x);
        Tensor loss = mean(mul(diff, diff));
        backward(loss);
        opt.step();
        opt.zero_grad();
        last_loss = loss.item();
      } catch (const NumericalError& e) {
        throw NumericalError("pretrain_generator: epoch " + std::to_string(epoch) +
                             ": " + e.what());
      }
    }
  }

  // Full-dataset reconstruction error, evaluated in batches.
  double sse = 0.0;
  for (Index start = 0; start < n; start += 256) {
    const Index stop = std::min(n, start + 256);
    Mat xb = ds.pixels.middleRows(start, stop - start);
    Tensor x = Tensor::from_matrix(xb);
    Tensor diff = sub(dec.forward(encode(x)), x);
    sse += diff.value().square().sum();
  }
  const double recon_mse = sse / (static_cast<double>(n) * static_cast<double>(d));

  dec.set_requires_grad(false);
  MappingNetwork map(cfg.z_dim, cfg.w_dim, mix_seed(cfg.seed, 2));
  PretrainReport report;
  report.mode = "autoencoder";
  report.recon_mse = recon_mse;
  report.recon_warning = recon_mse > cfg.recon_warn_threshold;
  report.final_loss = last_loss;
  return {Generator(std::move(map), std::move(dec)), report};
}

std::pair<Generator, PretrainReport> pretrain_gan(const Dataset& ds,
                                                  const GeneratorTrainConfig& cfg) {
  const Index d = ds.pixels_per_image();
  SynthesisNetwork gen(cfg.w_dim, cfg.hidden, d, mix_seed(cfg.seed, 1));
  Rng disc_rng(mix_seed(cfg.seed, 5));
  Tensor wd1 = init_weight(disc_rng, 128, d, true);
  Tensor bd1 = init_bias(128, true);
  Tensor wd2 = init_weight(disc_rng, 1, 128, true);
  Tensor bd2 = init_bias(1, true);
  auto discriminate = [&](const Tensor& x) {
    Tensor h = relu(affine(x, wd1, bd1));
    return affine(h, wd2, bd2);
  };

  AdamConfig acfg;
  acfg.lr = cfg.lr;
  acfg.beta1 = 0.5;  // standard damping for adversarial training
  Adam opt_g(gen.params(), acfg);
  Adam opt_d({wd1, bd1, wd2, bd2}, acfg);

  Rng shuffle_rng(mix_seed(cfg.seed, 3));
  Rng latent_rng(mix_seed(cfg.seed, 4));
  const Index n = ds.n();
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  double last_g_loss = 0.0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    for (Index start = 0; start < n; start += cfg.batch_size) {
      const Index stop = std::min(n, start + cfg.batch_size);
      const Index bs = stop - start;
      Mat xb(bs, d);
      for (Index r = start; r < stop; ++r) xb.row(r - start) = ds.pixels.row(order[r]);
      try {
        Tensor w = sample_latents(latent_rng, bs, cfg.w_dim);
        Tensor fake = gen.forward(w);
        // Discriminator step on a detached copy of the fakes.
        Tensor fake_det = Tensor::from_array(fake.shape(), fake.value());
        Tensor loss_d = mean(softplus(scale(discriminate(Tensor::from_matrix(xb)), -1.0))) +
                        mean(softplus(discriminate(fake_det)));
        backward(loss_d);
        opt_d.step();
        opt_d.zero_grad();
        opt_g.zero_grad();
        // Non-saturating generator step.
        Tensor loss_g = mean(softplus(scale(discriminate(fake), -1.0)));
        backward(loss_g);
        opt_g.step();
        opt_g.zero_grad();
        opt_d.zero_grad();
        last_g_loss = loss_g.item();
      } catch (const NumericalError& e) {
        throw NumericalError("pretrain_generator: epoch " + std::to_string(epoch) +
                             ": " + e.what());
      }
    }
  }

  gen.set_requires_grad(false);
  MappingNetwork map(cfg.z_dim, cfg.w_dim, mix_seed(cfg.seed, 2));
  PretrainReport report;
  report.mode = "gan";
  report.final_loss = last_g_loss;
  return {Generator(std::move(map), std::move(gen)), report};
}

}  // namespace

std::pair<Generator, PretrainReport> pretrain_generator(
    const Dataset& public_ds, const GeneratorTrainConfig& cfg) {
  public_ds.validate();
  if (cfg.epochs < 1) throw ContractError("pretrain_generator: epochs must be >= 1");
  if (cfg.batch_size < 1) throw ContractError("pretrain_generator: batch_size must be >= 1");
  if (cfg.z_dim < 1 || cfg.w_dim < 1 || cfg.hidden < 1)
    throw ContractError("pretrain_generator: dimensions must be >= 1");
  if (cfg.mode == "autoencoder") return pretrain_autoencoder(public_ds, cfg);
  if (cfg.mode == "gan") return pretrain_gan(public_ds, cfg);
  throw ConfigError("pretrain_generator: unknown mode '" + cfg.mode +
                    "' (expected 'autoencoder' or 'gan')");
}

}  // namespace dmmia
