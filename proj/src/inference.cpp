#include "latentdial/inference.hpp"

#include <chrono>
#include <fstream>
#include <numeric>
#include <sstream>

#include "latentdial/losses.hpp"

namespace latentdial {

std::string to_string(DecodeMode m) { return m == DecodeMode::Beam ? "beam" : "nucleus"; }

DecodeMode decode_mode_from_string(const std::string& s) {
  if (s == "beam") return DecodeMode::Beam;
  if (s == "nucleus") return DecodeMode::Nucleus;
  throw std::invalid_argument("unknown decode mode '" + s + "' (expected beam|nucleus)");
}

void GenerationOptions::validate() const {
  if (beam_width < 1) throw std::invalid_argument("beam_width must be >= 1");
  if (max_length < 1) throw std::invalid_argument("max_length must be >= 1");
  if (!(length_norm_alpha >= 0.0)) throw std::invalid_argument("length_norm_alpha must be >= 0");
  if (!(nucleus_p > 0.0 && nucleus_p <= 1.0)) throw std::invalid_argument("nucleus_p must lie in (0, 1]");
}

void GenerationOptions::set(const std::string& key, const std::string& value) {
  auto to_size = [&] {
    std::size_t pos = 0;
    const long long v = std::stoll(value, &pos);
    if (pos != value.size() || v < 0) throw std::invalid_argument("bad value for " + key + ": " + value);
    return static_cast<std::size_t>(v);
  };
  auto to_real = [&] {
    std::size_t pos = 0;
    const double v = std::stod(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("bad value for " + key + ": " + value);
    return v;
  };
  GenerationOptions next = *this;
  if (key == "mode")
    next.mode = decode_mode_from_string(value);
  else if (key == "beam_width")
    next.beam_width = to_size();
  else if (key == "alpha" || key == "length_norm_alpha")
    next.length_norm_alpha = to_real();
  else if (key == "nucleus_p" || key == "p")
    next.nucleus_p = to_real();
  else if (key == "max_length")
    next.max_length = to_size();
  else if (key == "r_policy")
    next.r_policy = r_policy_from_string(value);
  else if (key == "seed" || key == "rng_seed")
    next.rng_seed = to_size();
  else
    throw std::invalid_argument("unknown generation option '" + key + "'");
  next.validate();
  *this = next;
}

// ------------------------------------------------------------------ nucleus

std::vector<TokenId> nucleus_set(const std::vector<double>& logits, double p) {
  if (!(p > 0.0 && p <= 1.0)) throw std::invalid_argument("nucleus p must lie in (0, 1]");
  if (logits.empty()) throw std::invalid_argument("nucleus sampling over an empty vocabulary");
  double mx = -std::numeric_limits<double>::infinity();
  for (double l : logits) mx = std::max(mx, l);
  if (mx == -std::numeric_limits<double>::infinity()) throw std::invalid_argument("all logits are -inf");
  std::vector<double> prob(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) z += prob[i] = std::exp(logits[i] - mx);
  std::vector<TokenId> order(logits.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](TokenId a, TokenId b) { return prob[a] > prob[b]; });
  std::vector<TokenId> keep;
  double mass = 0.0;
  for (TokenId id : order) {
    if (prob[id] <= 0.0) break;
    keep.push_back(id);
    mass += prob[id] / z;
    if (mass >= p) break;
  }
  return keep;
}

TokenId nucleus_sample_step(const std::vector<double>& logits, double p, Rng& rng) {
  const auto keep = nucleus_set(logits, p);
  const double mx = logits[keep.front()];
  std::vector<double> w(keep.size());
  double z = 0.0;
  for (std::size_t i = 0; i < keep.size(); ++i) z += w[i] = std::exp(logits[keep[i]] - mx);
  double u = rng.uniform() * z;
  for (std::size_t i = 0; i < keep.size(); ++i) {
    if (u < w[i]) return keep[i];
    u -= w[i];
  }
  return keep.back();
}

// ------------------------------------------------------------------ stepper

DecoderStepper::DecoderStepper(const DialogueModel& model, const TokenSeq& prompt, const Matrix& latent)
    : model_(&model), latent_(latent) {
  const auto& cfg = model.config();
  if (latent.rows() != 1 || latent.cols() != cfg.latent_dim())
    throw std::invalid_argument("stepper latent must be [1 x latent_dim]");
  model.decoder_init().forward(latent_, h0_);
  model.decoder_gru().project_cond(latent_, cond_proj_);
  if (cfg.attention) {
    const PromptEncoding enc = model.encode_prompt(SequenceBatch::from_sequences({prompt}));
    memory_ = enc.memory;
    mask_ = enc.mask;
  }
}

std::vector<double> DecoderStepper::logits(const Matrix& h, TokenId prev, Matrix& h_next) const {
  Matrix emb;
  model_->embedding().lookup({prev}, emb);
  model_->decoder_gru().step(emb, h, cond_proj_, h_next);
  Matrix logits;
  if (model_->config().attention) {
    Matrix ctx;
    model_->attend(h_next, 1, memory_, mask_, ctx);
    model_->output().forward(concat_cols(h_next, ctx), logits);
  } else {
    model_->output().forward(h_next, logits);
  }
  return logits.values();
}

StepResult<Matrix> DecoderStepper::operator()(const Matrix& h, TokenId prev) const {
  StepResult<Matrix> r;
  Matrix lg(1, model_->config().vocab_size);
  lg.values() = logits(h, prev, r.next);
  log_softmax_rows(lg);
  r.log_probs = std::move(lg.values());
  r.log_probs[kPadId] = -std::numeric_limits<double>::infinity();
  r.log_probs[kBosId] = -std::numeric_limits<double>::infinity();
  return r;
}

// ------------------------------------------------------------------ generate

Matrix prompt_latent(const DialogueModel& model, const TokenSeq& prompt, RPolicy policy, Rng& rng) {
  if (prompt.empty()) throw std::invalid_argument("prompt is empty");
  return model.infer_latent(SequenceBatch::from_sequences({prompt}), policy, &rng);
}

Generation generate(const DialogueModel& model, const TokenSeq& prompt, const GenerationOptions& opts) {
  opts.validate();
  Rng r_rng(derive_seed(opts.rng_seed, "r_policy"));
  return decode_latent(model, prompt, prompt_latent(model, prompt, opts.r_policy, r_rng), opts);
}

Generation decode_latent(const DialogueModel& model, const TokenSeq& prompt, const Matrix& latent,
                         const GenerationOptions& opts) {
  opts.validate();
  const DecoderStepper stepper(model, prompt, latent);

  Hypothesis hyp;
  if (opts.mode == DecodeMode::Beam) {
    BeamOptions bo;
    bo.width = opts.beam_width;
    bo.alpha = opts.length_norm_alpha;
    bo.max_length = opts.max_length;
    bo.eos = kEosId;
    hyp = beam_search<Matrix>(stepper, stepper.initial_state(), kBosId, bo);
  } else {
    Rng rng(derive_seed(opts.rng_seed, "nucleus"));
    Matrix h = stepper.initial_state();
    TokenId prev = kBosId;
    for (std::size_t t = 0; t < opts.max_length; ++t) {
      StepResult<Matrix> r = stepper(h, prev);
      const TokenId tok = nucleus_sample_step(r.log_probs, opts.nucleus_p, rng);
      hyp.tokens.push_back(tok);
      hyp.log_prob += r.log_probs[tok];
      if (tok == kEosId) {
        hyp.finished = true;
        break;
      }
      h = std::move(r.next);
      prev = tok;
    }
    hyp.truncated = !hyp.finished;
  }

  Generation g;
  g.log_prob = hyp.log_prob;
  g.score = hyp.score(opts.length_norm_alpha);
  g.truncated = hyp.truncated;
  g.finished = hyp.finished;
  for (TokenId t : hyp.tokens)
    if (!is_special(t)) g.tokens.push_back(t);
  return g;
}

std::string generate_text(const DialogueModel& model, const Vocabulary& vocab, const std::string& prompt,
                          const GenerationOptions& opts, Generation* out) {
  const TokenSeq ids = vocab.encode(split_tokens(prompt));
  if (ids.empty()) throw std::invalid_argument("prompt is empty");
  Generation g = generate(model, ids, opts);
  std::string text = join_tokens(vocab.decode(g.tokens));
  if (out) *out = std::move(g);
  return text;
}

std::size_t generate_file(const DialogueModel& model, const Vocabulary& vocab,
                          const std::filesystem::path& input, const std::filesystem::path& output,
                          const GenerationOptions& opts, std::ostream* progress) {
  std::ifstream in(input);
  if (!in) throw std::runtime_error("cannot read prompts: " + input.string());
  if (output.has_parent_path()) std::filesystem::create_directories(output.parent_path());
  std::ofstream out(output);
  if (!out) throw std::runtime_error("cannot write generations: " + output.string());
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    // pair files are accepted too: only the prompt column is used
    const std::string prompt = line.substr(0, line.find('\t'));
    if (split_tokens(prompt).empty()) continue;
    Generation g;
    const std::string response = generate_text(model, vocab, prompt, opts, &g);
    out << prompt << '\t' << response << '\t' << g.score << '\n';
    ++n;
    if (progress && n % 100 == 0) *progress << "generated " << n << " responses\n";
  }
  return n;
}

int chat_repl(const DialogueModel& model, const Vocabulary& vocab, GenerationOptions opts, std::istream& in,
              std::ostream& out) {
  std::string line;
  out << "> " << std::flush;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto words = split_tokens(line);
    if (words.empty()) {
      out << "> " << std::flush;
      continue;
    }
    if (words[0] == ":quit" || words[0] == ":q") return 0;
    if (words[0] == ":opts") {
      try {
        for (std::size_t i = 1; i < words.size(); ++i) {
          const auto eq = words[i].find('=');
          if (eq == std::string::npos) throw std::invalid_argument("expected key=value, got '" + words[i] + "'");
          opts.set(words[i].substr(0, eq), words[i].substr(eq + 1));
        }
        out << "mode=" << to_string(opts.mode) << " beam_width=" << opts.beam_width
            << " alpha=" << opts.length_norm_alpha << " nucleus_p=" << opts.nucleus_p
            << " max_length=" << opts.max_length << " r_policy=" << to_string(opts.r_policy)
            << " seed=" << opts.rng_seed << '\n';
      } catch (const std::exception& e) {
        out << "error: " << e.what() << '\n';
      }
      out << "> " << std::flush;
      continue;
    }
    if (words[0].starts_with(":")) {
      out << "error: unknown command " << words[0] << " (try :opts key=value or :quit)\n> " << std::flush;
      continue;
    }
    try {
      const auto t0 = std::chrono::steady_clock::now();
      Generation g;
      const std::string response = generate_text(model, vocab, line, opts, &g);
      const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      out << response << '\n';
      std::ostringstream meta;
      meta.precision(4);
      meta << "  [score " << g.score << (g.truncated ? ", truncated" : "") << ", " << ms << " ms]";
      out << meta.str() << '\n';
    } catch (const std::exception& e) {
      out << "error: " << e.what() << '\n';
    }
    out << "> " << std::flush;
  }
  return 0;
}

}  // namespace latentdial
