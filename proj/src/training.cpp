#include "latentdial/training.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include "latentdial/rng.hpp"

namespace latentdial {

using nlohmann::json;

// ------------------------------------------------------------------ config

ModelConfig TrainConfig::apply_to(ModelConfig model) const {
  if (model.kind == ModelKind::Baseline) return model;
  if (no_uncorrelated) model.k_uncorrelated = 0;
  if (attention) model.attention = true;
  return model;
}

void TrainConfig::validate() const {
  if (batch_size < 2) throw std::invalid_argument("batch_size must be >= 2");
  if (replace_prob < 0.0 || replace_prob > 1.0) throw std::invalid_argument("replace_prob must lie in [0,1]");
  if (!(adam.lr > 0.0)) throw std::invalid_argument("learning rate must be positive");
  loss.validate();
}

json to_json(const TrainConfig& c) {
  return {
      {"adam", {{"lr", c.adam.lr}, {"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"eps", c.adam.eps}}},
      {"batch_size", c.batch_size},
      {"drop_last", c.drop_last},
      {"loss",
       {{"lambda1", c.loss.lambda1}, {"lambda2", c.loss.lambda2}, {"lambda3", c.loss.lambda3},
        {"lambda4", c.loss.lambda4}, {"lambda5", c.loss.lambda5}, {"lambda6", c.loss.lambda6},
        {"variance_target", c.loss.variance_target}}},
      {"replace_prob", c.replace_prob},
      {"clip_norm", c.clip_norm},
      {"max_epochs", c.max_epochs},
      {"max_steps", c.max_steps},
      {"patience", c.patience},
      {"seed", c.seed},
      {"no_uncorrelated", c.no_uncorrelated},
      {"no_denoising", c.no_denoising},
      {"attention", c.attention},
      {"checkpoint_every_epochs", c.checkpoint_every_epochs},
      {"validate_every_epochs", c.validate_every_epochs},
  };
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  const auto& a = j.at("adam");
  c.adam = {a.at("lr"), a.at("beta1"), a.at("beta2"), a.at("eps")};
  c.batch_size = j.at("batch_size");
  c.drop_last = j.at("drop_last");
  const auto& l = j.at("loss");
  c.loss = {l.at("lambda1"), l.at("lambda2"), l.at("lambda3"), l.at("lambda4"),
            l.at("lambda5"), l.at("lambda6"), l.at("variance_target")};
  c.replace_prob = j.at("replace_prob");
  c.clip_norm = j.at("clip_norm");
  c.max_epochs = j.at("max_epochs");
  c.max_steps = j.at("max_steps");
  c.patience = j.at("patience");
  c.seed = j.at("seed");
  c.no_uncorrelated = j.at("no_uncorrelated");
  c.no_denoising = j.at("no_denoising");
  c.attention = j.at("attention");
  c.checkpoint_every_epochs = j.at("checkpoint_every_epochs");
  c.validate_every_epochs = j.at("validate_every_epochs");
  return c;
}

json StepRecord::to_json() const {
  const auto& d = losses.diagnostics;
  json grads = json::object();
  for (const auto& [c, n] : component_grad_norm) grads[to_string(c)] = n;
  return {
      {"step", step},
      {"epoch", epoch},
      {"L_c", losses.cca},
      {"L_a", losses.reconstruction},
      {"L_v", losses.kl},
      {"total", losses.total},
      {"ratio", losses.kl_reconstruction_ratio()},
      {"diag",
       {{"x_max_abs_mean", d.x.max_mean_abs},
        {"y_max_abs_mean", d.y.max_mean_abs},
        {"x_max_var_dev", d.x.max_variance_dev},
        {"y_max_var_dev", d.y.max_variance_dev},
        {"x_max_offdiag_gram", d.x.max_offdiag_gram},
        {"y_max_offdiag_gram", d.y.max_offdiag_gram},
        {"x_max_offdiag_corr", d.x.max_offdiag_corr},
        {"y_max_offdiag_corr", d.y.max_offdiag_corr},
        {"mean_pair_corr", d.mean_pair_corr}}},
      {"grad_norm", grad_norm},
      {"component_grad_norm", grads},
  };
}

// ------------------------------------------------------------------ one batch

namespace {

Matrix cols(const Matrix& src, std::size_t begin, std::size_t count) {
  Matrix out(src.rows(), count);
  for (std::size_t r = 0; r < src.rows(); ++r) std::copy_n(src.row(r) + begin, count, out.row(r));
  return out;
}

bool finite(const LossBreakdown& b) {
  return std::isfinite(b.cca) && std::isfinite(b.reconstruction) && std::isfinite(b.kl) &&
         std::isfinite(b.total);
}

std::string dump_batch(const Batch& b, const LossBreakdown& l) {
  std::ostringstream os;
  os << "L_c=" << l.cca << " L_a=" << l.reconstruction << " L_v=" << l.kl << " total=" << l.total << "\n";
  os << "rows (source index: prompt | response):\n";
  for (std::size_t i = 0; i < b.m; ++i) {
    os << b.source_index[i] << ":";
    for (std::size_t t = 0; t < b.prompt_lengths[i]; ++t) os << ' ' << b.prompt_at(i, t);
    os << " |";
    for (std::size_t t = 0; t < b.response_lengths[i]; ++t) os << ' ' << b.response_at(i, t);
    os << '\n';
  }
  return os.str();
}

// A diverged variance head yields a NaN value instead of an exception, so the
// step reports it through the non-finite check with its batch dump.
KlResult guarded_kl(const UncorrelatedPosterior& post) {
  for (double s2 : post.sigma2.values()) {
    if (!(s2 > 0.0) || !std::isfinite(s2)) {
      KlResult bad;
      bad.value = std::numeric_limits<double>::quiet_NaN();
      bad.grad_mu = Matrix(post.mu.rows(), post.mu.cols());
      bad.grad_sigma2 = bad.grad_mu;
      bad.grad_logvar = bad.grad_mu;
      return bad;
    }
  }
  return kl_loss(post);
}

}  // namespace

LossBreakdown forward_backward(DialogueModel& model, Batch& batch, const TrainConfig& cfg,
                               std::uint64_t step_seed) {
  const auto& mc = model.config();
  const auto& lc = cfg.loss;
  const bool baseline = mc.kind == ModelKind::Baseline;

  if (!baseline) {
    Rng noise(derive_seed(step_seed, "denoise"));
    apply_denoising(batch, cfg.effective_replace_prob(), noise);
  }
  const PromptEncoding pe = model.encode_prompt(SequenceBatch::prompts_of(batch));
  const SequenceBatch clean = SequenceBatch::responses_of(batch, false);
  Matrix dmemory;
  Matrix* dmem = mc.attention ? &dmemory : nullptr;

  if (baseline) {
    const DecoderPass dp = model.decode_teacher_forced(pe.x, clean, &pe);
    const auto rec = reconstruction_loss(dp.logits, dp.targets_tm, dp.mask);
    const Matrix dx = model.decode_backward(dp, rec.grad_logits, &pe, dmem);
    model.encode_prompt_backward(pe, dx, dmem);
    LossBreakdown out;
    out.reconstruction = rec.value;
    out.total = rec.value;
    return out;
  }

  Rng sampler(derive_seed(step_seed, "sample"));
  const ResponseEncoding re = model.encode_response(SequenceBatch::responses_of(batch, true), true, &sampler);
  const Matrix latent = concat_cols(re.y, re.yu);
  const DecoderPass dp = model.decode_teacher_forced(latent, clean, mc.attention ? &pe : nullptr);

  auto rec = reconstruction_loss(dp.logits, dp.targets_tm, dp.mask);
  const auto cca = cca_loss(pe.x, re.y, lc);
  const std::size_t k = mc.k_correlated;
  const std::size_t ku = mc.k_uncorrelated;
  KlResult kl;
  if (ku) kl = guarded_kl(re.posterior);

  for (auto& g : rec.grad_logits.values()) g *= lc.lambda5;
  const Matrix dlatent = model.decode_backward(dp, rec.grad_logits, mc.attention ? &pe : nullptr, dmem);

  Matrix dy = cols(dlatent, 0, k);
  for (std::size_t i = 0; i < dy.size(); ++i) dy.data()[i] += lc.lambda4 * cca.grad_y.data()[i];
  Matrix dmu(batch.m, ku), dlogvar(batch.m, ku);
  if (ku) {
    const Matrix dyu = cols(dlatent, k, ku);
    for (std::size_t i = 0; i < dmu.size(); ++i) {
      const double std_dev = std::exp(0.5 * re.logvar.data()[i]);
      dmu.data()[i] = dyu.data()[i] + lc.lambda6 * kl.grad_mu.data()[i];
      dlogvar.data()[i] = dyu.data()[i] * re.eps.data()[i] * 0.5 * std_dev + lc.lambda6 * kl.grad_logvar.data()[i];
    }
  }
  model.encode_response_backward(re, dy, dmu, dlogvar);

  Matrix dx = cca.grad_x;
  for (auto& g : dx.values()) g *= lc.lambda4;
  model.encode_prompt_backward(pe, dx, dmem);

  LossBreakdown out = total_loss(cca.value, rec.value, ku ? kl.value : 0.0, lc);
  out.diagnostics = cca.diagnostics;
  return out;
}

LossBreakdown evaluate_batch(const DialogueModel& model, const Batch& batch, const LossConfig& lc) {
  const auto& mc = model.config();
  const PromptEncoding pe = model.encode_prompt(SequenceBatch::prompts_of(batch));
  const SequenceBatch clean = SequenceBatch::responses_of(batch, false);
  if (mc.kind == ModelKind::Baseline) {
    const DecoderPass dp = model.decode_teacher_forced(pe.x, clean, &pe);
    const auto rec = reconstruction_loss(dp.logits, dp.targets_tm, dp.mask);
    LossBreakdown out;
    out.reconstruction = rec.value;
    out.total = rec.value;
    return out;
  }
  const ResponseEncoding re = model.encode_response(clean, false, nullptr);
  const DecoderPass dp =
      model.decode_teacher_forced(concat_cols(re.y, re.yu), clean, mc.attention ? &pe : nullptr);
  const auto rec = reconstruction_loss(dp.logits, dp.targets_tm, dp.mask);
  const auto cca = cca_loss(pe.x, re.y, lc);
  const double kl = mc.k_uncorrelated ? guarded_kl(re.posterior).value : 0.0;
  LossBreakdown out = total_loss(cca.value, rec.value, kl, lc);
  out.diagnostics = cca.diagnostics;
  return out;
}

LossBreakdown evaluate(const DialogueModel& model, const std::vector<TokenizedPair>& pairs,
                       const TrainConfig& cfg) {
  LossBreakdown sum;
  std::size_t rows = 0;
  const std::size_t bs = cfg.batch_size;
  const auto order = shuffled_order(pairs.size(), derive_seed(cfg.seed, "evaluate"));
  for (std::size_t start = 0; start < pairs.size();) {
    std::size_t end = std::min(pairs.size(), start + bs);
    if (pairs.size() - end == 1) ++end;  // never leave a single-row batch behind
    if (end - start < 2) break;
    const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                       order.begin() + static_cast<std::ptrdiff_t>(end));
    const Batch b = collate(pairs, idx);
    const LossBreakdown l = evaluate_batch(model, b, cfg.loss);
    const double w = static_cast<double>(b.m);
    sum.cca += w * l.cca;
    sum.reconstruction += w * l.reconstruction;
    sum.kl += w * l.kl;
    rows += b.m;
    start = end;
  }
  if (rows == 0) return sum;
  const double inv = 1.0 / static_cast<double>(rows);
  if (model.config().kind == ModelKind::Baseline) {
    LossBreakdown out;
    out.reconstruction = sum.reconstruction * inv;
    out.total = out.reconstruction;
    return out;
  }
  return total_loss(sum.cca * inv, sum.reconstruction * inv, sum.kl * inv, cfg.loss);
}

StepRecord train_step(TrainState& state, Batch batch, const TrainConfig& cfg) {
  if (batch.m < 2) throw std::invalid_argument("train_step needs a batch with at least two rows");
  auto& model = state.model;
  model.zero_grad();
  const LossBreakdown losses = forward_backward(model, batch, cfg, derive_seed(cfg.seed, "step", state.step));

  StepRecord rec;
  rec.step = state.step;
  rec.epoch = state.epoch;
  rec.losses = losses;

  double sq = 0.0;
  std::map<Component, double> comp_sq;
  const auto groups = model.params_by_component();
  const auto& kt = kernels::active_kernels();
  for (const auto& [c, p] : groups) {
    const double s = kt.dot(p->grad.size(), p->grad.data(), p->grad.data());
    sq += s;
    comp_sq[c] += s;
  }
  rec.grad_norm = std::sqrt(sq);
  for (const auto& [c, s] : comp_sq) rec.component_grad_norm[c] = std::sqrt(s);

  if (!finite(losses) || !std::isfinite(rec.grad_norm)) {
    throw NonFiniteLossError("non-finite loss at step " + std::to_string(state.step), dump_batch(batch, losses));
  }

  if (cfg.clip_norm > 0.0 && rec.grad_norm > cfg.clip_norm) {
    const double scale = cfg.clip_norm / rec.grad_norm;
    for (const auto& [c, p] : groups)
      for (auto& g : p->grad.values()) g *= scale;
  }

  auto& adam = state.adam;
  ++adam.t;
  const kernels::AdamArgs args{cfg.adam.lr,
                               cfg.adam.beta1,
                               cfg.adam.beta2,
                               cfg.adam.eps,
                               1.0 - std::pow(cfg.adam.beta1, static_cast<double>(adam.t)),
                               1.0 - std::pow(cfg.adam.beta2, static_cast<double>(adam.t))};
  for (const auto& [c, p] : groups) {
    auto& m = adam.m[p->name];
    auto& v = adam.v[p->name];
    if (!m.same_shape(p->value)) m = Matrix(p->value.rows(), p->value.cols());
    if (!v.same_shape(p->value)) v = Matrix(p->value.rows(), p->value.cols());
    kt.adam(p->value.size(), args, p->grad.data(), m.data(), v.data(), p->value.data());
  }

  ++state.step;
  state.ratio_history.push_back(losses.kl_reconstruction_ratio());
  return rec;
}

// ------------------------------------------------------------------ checkpoint state

Checkpoint checkpoint_state(const TrainState& state, const Vocabulary& vocab, const TrainConfig& cfg,
                            const json& run_config) {
  Checkpoint ck = snapshot(state.model, vocab);
  for (const auto& [name, m] : state.adam.m) ck.tensors["adam.m/" + name] = m;
  for (const auto& [name, v] : state.adam.v) ck.tensors["adam.v/" + name] = v;
  json ts = {
      {"step", state.step},
      {"epoch", state.epoch},
      {"batch_in_epoch", state.batch_in_epoch},
      {"best_validation", std::isfinite(state.best_validation) ? json(state.best_validation) : json(nullptr)},
      {"epochs_since_best", state.epochs_since_best},
      {"adam_t", state.adam.t},
      {"ratio_history", state.ratio_history},
      {"epoch_sum", {state.epoch_sum.cca, state.epoch_sum.reconstruction, state.epoch_sum.kl, state.epoch_sum.total}},
      {"epoch_batches", state.epoch_batches},
  };
  ck.extra = {{"train_state", ts}, {"train_config", to_json(cfg)}, {"run_config", run_config}};
  return ck;
}

TrainState restore_state(const Checkpoint& ck) {
  TrainState st;
  st.model = ck.make_model();
  for (const auto& [name, m] : ck.tensors) {
    if (name.starts_with("adam.m/")) st.adam.m[name.substr(7)] = m;
    if (name.starts_with("adam.v/")) st.adam.v[name.substr(7)] = m;
  }
  if (ck.extra.contains("train_state")) {
    const auto& ts = ck.extra.at("train_state");
    st.step = ts.at("step");
    st.epoch = ts.at("epoch");
    st.batch_in_epoch = ts.at("batch_in_epoch");
    st.best_validation = ts.at("best_validation").is_null() ? std::numeric_limits<double>::infinity()
                                                           : ts.at("best_validation").get<double>();
    st.epochs_since_best = ts.at("epochs_since_best");
    st.adam.t = ts.at("adam_t");
    st.ratio_history = ts.at("ratio_history").get<std::vector<double>>();
    const auto es = ts.at("epoch_sum").get<std::vector<double>>();
    st.epoch_sum.cca = es.at(0);
    st.epoch_sum.reconstruction = es.at(1);
    st.epoch_sum.kl = es.at(2);
    st.epoch_sum.total = es.at(3);
    st.epoch_batches = ts.at("epoch_batches");
  }
  return st;
}

// ------------------------------------------------------------------ loop

TrainResult train(const TrainData& data, const ModelConfig& model_cfg_in, const TrainConfig& cfg,
                  const TrainOptions& opts, std::optional<TrainState> resume_from) {
  cfg.validate();
  if (data.train.empty()) throw std::invalid_argument("training set is empty");
  const auto t0 = std::chrono::steady_clock::now();
  ModelConfig model_cfg = cfg.apply_to(model_cfg_in);
  model_cfg.vocab_size = data.vocab.size();

  TrainResult result;
  result.state = resume_from ? std::move(*resume_from) : TrainState(model_cfg, cfg.seed);
  TrainState& st = result.state;
  if (st.model.config().vocab_size != data.vocab.size())
    throw std::invalid_argument("resumed model vocabulary does not match the corpus vocabulary");

  std::ofstream log_file;
  if (!opts.out_dir.empty()) {
    std::filesystem::create_directories(opts.out_dir);
    result.log_path = opts.out_dir / "train_log.jsonl";
    log_file.open(result.log_path, st.step == 0 ? std::ios::trunc : std::ios::app);
    if (!log_file) throw std::runtime_error("cannot write training log: " + result.log_path.string());
  }
  auto save = [&](const std::filesystem::path& path, const TrainState& s) {
    save_checkpoint(path, checkpoint_state(s, data.vocab, cfg, opts.run_config));
  };

  bool finished = false;
  while (!finished && st.epoch < cfg.max_epochs) {
    const auto batches = make_batches(data.train, {cfg.batch_size, cfg.drop_last},
                                      derive_seed(cfg.seed, "batching", st.epoch));
    for (std::size_t b = st.batch_in_epoch; b < batches.size(); ++b) {
      if (cfg.max_steps && st.step >= cfg.max_steps) {
        finished = true;
        break;
      }
      if (opts.stop_after_step && st.step >= *opts.stop_after_step) {
        st.batch_in_epoch = b;
        result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        return result;
      }
      st.batch_in_epoch = b + 1;
      if (batches[b].m < 2) continue;
      StepRecord rec;
      try {
        rec = train_step(st, batches[b], cfg);
      } catch (const NonFiniteLossError& e) {
        if (!opts.out_dir.empty()) {
          std::ofstream dump(opts.out_dir / "nonfinite_batch.txt");
          dump << e.what() << '\n' << e.dump();
        }
        throw;
      }
      const std::string line = rec.to_json().dump();
      if (opts.log) *opts.log << line << '\n';
      if (log_file) log_file << line << '\n';
      st.epoch_sum.cca += rec.losses.cca;
      st.epoch_sum.reconstruction += rec.losses.reconstruction;
      st.epoch_sum.kl += rec.losses.kl;
      st.epoch_sum.total += rec.losses.total;
      ++st.epoch_batches;
      result.steps.push_back(std::move(rec));
    }
    if (finished && st.batch_in_epoch < batches.size()) break;

    EpochSummary summary;
    summary.epoch = st.epoch;
    if (st.epoch_batches) {
      const double inv = 1.0 / static_cast<double>(st.epoch_batches);
      summary.train_mean.cca = st.epoch_sum.cca * inv;
      summary.train_mean.reconstruction = st.epoch_sum.reconstruction * inv;
      summary.train_mean.kl = st.epoch_sum.kl * inv;
      summary.train_mean.total = st.epoch_sum.total * inv;
    }
    st.epoch_sum = LossBreakdown{};
    st.epoch_batches = 0;
    st.batch_in_epoch = 0;
    ++st.epoch;

    bool improved = false;
    if (!data.validation.empty() && cfg.validate_every_epochs && st.epoch % cfg.validate_every_epochs == 0) {
      summary.validation = evaluate(st.model, data.validation, cfg);
      if (summary.validation->total < st.best_validation) {
        st.best_validation = summary.validation->total;
        st.epochs_since_best = 0;
        improved = true;
      } else {
        ++st.epochs_since_best;
      }
    }
    if (improved) {
      result.best_model = st.model;
      if (!opts.out_dir.empty()) {
        result.best_checkpoint = opts.out_dir / "best.ckpt";
        save(result.best_checkpoint, st);
      }
    }
    if (!opts.out_dir.empty() && cfg.checkpoint_every_epochs && st.epoch % cfg.checkpoint_every_epochs == 0) {
      result.last_checkpoint = opts.out_dir / "last.ckpt";
      save(result.last_checkpoint, st);
    }
    if (opts.progress) {
      *opts.progress << "epoch " << summary.epoch << " train total " << summary.train_mean.total
                     << " (L_c " << summary.train_mean.cca << ", L_a " << summary.train_mean.reconstruction
                     << ", L_v " << summary.train_mean.kl << ")";
      if (summary.validation) *opts.progress << " | validation total " << summary.validation->total;
      *opts.progress << '\n';
    }
    result.epochs.push_back(summary);
    if (cfg.patience && st.epochs_since_best >= cfg.patience) {
      result.stopped_early = true;
      break;
    }
  }

  if (!opts.out_dir.empty()) {
    result.last_checkpoint = opts.out_dir / "last.ckpt";
    save(result.last_checkpoint, st);
    if (result.best_checkpoint.empty()) {
      result.best_checkpoint = opts.out_dir / "best.ckpt";
      save(result.best_checkpoint, st);
    }
  }
  if (!result.best_model) result.best_model = st.model;
  result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

TrainResult train_baseline(const TrainData& data, ModelConfig baseline_cfg, const TrainConfig& cfg,
                           const TrainOptions& opts) {
  baseline_cfg.kind = ModelKind::Baseline;
  baseline_cfg.k_uncorrelated = 0;
  baseline_cfg.attention = true;
  baseline_cfg.attention_bottleneck_dim = 0;
  return train(data, baseline_cfg, cfg, opts);
}

TrainData load_train_data(const CorpusPaths& paths, std::ostream* progress) {
  TrainData data;
  const auto raw_train = read_pair_file(paths.train);
  data.vocab = paths.vocab.empty() ? build_vocab(raw_train.raw, paths.min_freq) : Vocabulary::load(paths.vocab);
  data.train = tokenize_pairs(raw_train.raw, data.vocab);
  if (progress) {
    *progress << "train pairs: " << data.train.size() << " (skipped " << raw_train.skipped
              << " malformed), vocabulary " << data.vocab.size() << '\n';
  }
  if (!paths.validation.empty()) {
    const auto raw_val = read_pair_file(paths.validation);
    const auto tokenized = tokenize_pairs(raw_val.raw, data.vocab);
    data.validation = dedup_filter(data.train, tokenized);
    if (progress) {
      *progress << "validation pairs: " << data.validation.size() << " after removing "
                << tokenized.size() - data.validation.size() << " duplicates of training pairs\n";
    }
  }
  return data;
}

}  // namespace latentdial
