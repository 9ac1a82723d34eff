#include "latentdial/cli.hpp"

#include <fstream>
#include <map>
#include <optional>

#include "CLI11.hpp"

#include "latentdial/checkpoint.hpp"
#include "latentdial/config.hpp"
#include "latentdial/inference.hpp"
#include "latentdial/latent_inspect.hpp"
#include "latentdial/metrics.hpp"
#include "latentdial/synth_data.hpp"
#include "latentdial/training.hpp"

namespace latentdial {

namespace {

struct Globals {
  std::string config_file;
  std::string preset;
  std::optional<std::uint64_t> seed;
  std::string checkpoint;
  std::string out;
  std::vector<std::string> sets;
};

struct Loaded {
  DialogueModel model;
  Vocabulary vocab;
  nlohmann::json extra;
};

Loaded load_model(const std::string& path) {
  if (path.empty()) throw std::invalid_argument("--checkpoint is required");
  if (!std::filesystem::exists(path)) throw std::runtime_error("checkpoint not found: " + path);
  Checkpoint ck = load_checkpoint(path);
  return {ck.make_model(), ck.vocab, ck.extra};
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << j.dump(2) << '\n';
    if (!out) throw std::runtime_error("failed writing " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    out.push_back(line);
  }
  return out;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err) {
  CLI::App app{"latent-space dialogue generation: training, decoding, evaluation and latent inspection",
               "latentdial"};
  app.fallthrough();
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_file, "config file with dotted keys (key = value)");
  app.add_option("--preset", g.preset, "base configuration: full, toy or baseline");
  app.add_option("--seed", g.seed, "root seed (sets train.seed and generate.seed)");
  app.add_option("--checkpoint", g.checkpoint, "checkpoint to load");
  app.add_option("--out", g.out, "output directory or file");
  app.add_option("--set", g.sets, "config override key=value (repeatable)");

  // train
  auto* train_cmd = app.add_subcommand("train", "train the latent model or the baseline");
  std::string model_kind;
  bool no_unc = false, no_den = false, attention = false;
  std::string train_path, val_path, vocab_path, resume;
  train_cmd->add_option("--model", model_kind, "latent or baseline")->check(CLI::IsMember({"latent", "baseline"}));
  train_cmd->add_flag("--no-uncorrelated", no_unc, "drop the uncorrelated channel");
  train_cmd->add_flag("--no-denoising", no_den, "train without input word replacement");
  train_cmd->add_flag("--attention", attention, "enable bottlenecked attention");
  train_cmd->add_option("--train", train_path, "training pairs (prompt<TAB>response)");
  train_cmd->add_option("--validation", val_path, "validation pairs");
  train_cmd->add_option("--vocab", vocab_path, "vocabulary file (one token per line)");
  train_cmd->add_option("--resume", resume, "continue from a checkpoint written by train");

  // generate
  auto* gen = app.add_subcommand("generate", "batch generation from a prompt file");
  std::string gen_input;
  gen->add_option("--input", gen_input, "one prompt per line (pair files use their prompt column)")->required();

  // chat
  auto* chat = app.add_subcommand("chat", "interactive chat on stdin");

  // eval
  auto* eval = app.add_subcommand("eval", "BLEU, embedding similarity, distinct-n and UI score");
  std::string hyp_path, ref_path, emb_path, ann_path, label = "model";
  eval->add_option("--hyp", hyp_path, "hypotheses, one per line")->required();
  eval->add_option("--ref", ref_path, "references aligned with --hyp")->required();
  eval->add_option("--embeddings", emb_path, "word vectors: token v1 ... vd");
  eval->add_option("--annotations", ann_path, "response_id<TAB>annotator_id<TAB>informativeness<TAB>relevance");
  eval->add_option("--label", label, "row label in the table");

  // export-latents
  auto* exp = app.add_subcommand("export-latents", "encode sentences and write id/role/text/vector TSV");
  std::string exp_input, exp_role = "pair";
  std::size_t exp_limit = 1000;
  exp->add_option("--input", exp_input, "pair file, or plain sentences with --role")->required();
  exp->add_option("--role", exp_role, "pair, prompt or response")->check(CLI::IsMember({"pair", "prompt", "response"}));
  exp->add_option("--limit", exp_limit, "maximum sentences per role");

  // inspect
  auto* insp = app.add_subcommand("inspect", "nearest neighbours, pairing test, generic separation");
  std::string latents, query, pairs_path, corpus_dir;
  insp->add_option("--latents", latents, "TSV written by export-latents");
  insp->add_option("--query", query, "record id for a nearest-neighbour query");
  insp->add_option("--pairs", pairs_path, "pair file for the pairing test (needs --checkpoint)");

  // synth
  auto* synth = app.add_subcommand("synth", "write a synthetic template corpus");
  TemplateSpec spec;
  synth->add_option("--templates", spec.n_templates, "number of templates");
  synth->add_option("--paraphrases", spec.paraphrases_per_prompt, "training prompts per template");
  synth->add_option("--test-paraphrases", spec.test_paraphrases_per_prompt, "held-out prompts per template");
  synth->add_option("--responses", spec.responses_per_cluster, "responses per cluster");
  synth->add_option("--generic", spec.n_generic_responses, "number of generic responses");
  synth->add_option("--attach-prob", spec.generic_attach_prob, "chance a prompt also gets a generic reply");
  synth->add_flag("--cluster-disjoint", spec.cluster_disjoint_test, "hold out whole templates for test");

  std::vector<std::string> argv_rev(args.rbegin(), args.rend());
  try {
    app.parse(argv_rev);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    ConfigSources src;
    src.preset = g.preset;
    if (train_cmd->parsed() && g.preset.empty() && model_kind == "baseline") src.preset = "baseline";
    src.file = g.config_file;
    src.environment = current_environment();
    for (const auto& s : g.sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value, got '" + s + "'");
      src.overrides.emplace_back(s.substr(0, eq), s.substr(eq + 1));
    }
    if (g.seed) {
      src.overrides.emplace_back("train.seed", std::to_string(*g.seed));
      src.overrides.emplace_back("generate.seed", std::to_string(*g.seed));
    }
    if (train_cmd->parsed()) {
      if (!model_kind.empty()) src.overrides.emplace_back("model.kind", model_kind);
      if (no_unc) src.overrides.emplace_back("train.no_uncorrelated", "true");
      if (no_den) src.overrides.emplace_back("train.no_denoising", "true");
      if (attention) src.overrides.emplace_back("model.attention", "true");
      if (!train_path.empty()) src.overrides.emplace_back("data.train", train_path);
      if (!val_path.empty()) src.overrides.emplace_back("data.validation", val_path);
      if (!vocab_path.empty()) src.overrides.emplace_back("data.vocab", vocab_path);
    }
    if (synth->parsed() && g.seed) spec.rng_seed = *g.seed;
    const RunConfig cfg = resolve_config(src);
    err << "# resolved configuration\n" << cfg.to_text() << std::flush;

    if (train_cmd->parsed()) {
      if (cfg.model.kind == ModelKind::Baseline && (no_unc || no_den || attention))
        throw CLI::ValidationError("--no-uncorrelated, --no-denoising and --attention apply to the latent model only");
      if (cfg.model.kind == ModelKind::Baseline && (cfg.model.k_uncorrelated != 0 || !cfg.model.attention))
        throw CLI::ValidationError("the baseline needs model.k_uncorrelated = 0 and model.attention = true");
      if (cfg.data.train.empty()) throw CLI::ValidationError("a training corpus is required (--train or data.train)");
      if (g.out.empty()) throw CLI::ValidationError("--out is required for train");
      const TrainData data = load_train_data(
          {cfg.data.train, cfg.data.validation, cfg.data.vocab, cfg.data.min_freq}, &err);
      TrainOptions opts;
      opts.out_dir = g.out;
      opts.progress = &err;
      opts.run_config = cfg.to_json();
      std::filesystem::create_directories(opts.out_dir);
      data.vocab.save(opts.out_dir / "vocab.txt");
      write_json(opts.out_dir / "run_config.json", opts.run_config);
      std::optional<TrainState> state;
      if (!resume.empty()) {
        if (!std::filesystem::exists(resume)) throw std::runtime_error("checkpoint not found: " + resume);
        const Checkpoint ck = load_checkpoint(resume);
        if (ck.vocab.hash() != data.vocab.hash())
          throw std::runtime_error("resume checkpoint vocabulary differs from the corpus vocabulary");
        state = restore_state(ck);
      }
      ModelConfig mc = cfg.model;
      mc.vocab_size = data.vocab.size();
      const TrainResult r = cfg.model.kind == ModelKind::Baseline && !state
                                ? train_baseline(data, mc, cfg.train, opts)
                                : train(data, mc, cfg.train, opts, std::move(state));
      out << "trained " << r.steps.size() << " steps over " << r.epochs.size() << " epochs in " << r.wall_seconds
          << " s\nbest checkpoint: " << r.best_checkpoint.string() << "\nlast checkpoint: "
          << r.last_checkpoint.string() << "\nlog: " << r.log_path.string() << '\n';
      return 0;
    }

    if (gen->parsed()) {
      if (g.out.empty()) throw CLI::ValidationError("--out is required for generate");
      const Loaded m = load_model(g.checkpoint);
      const auto tmp = std::filesystem::path(g.out + ".tmp");
      const std::size_t n = generate_file(m.model, m.vocab, gen_input, tmp, cfg.generate, &err);
      std::filesystem::rename(tmp, g.out);
      out << "wrote " << n << " responses to " << g.out << '\n';
      return 0;
    }

    if (chat->parsed()) {
      const Loaded m = load_model(g.checkpoint);
      return chat_repl(m.model, m.vocab, cfg.generate, in, out);
    }

    if (eval->parsed()) {
      const auto hyps = read_sentences(hyp_path);
      const auto refs = read_sentences(ref_path);
      const std::string emb = emb_path.empty() ? cfg.eval_embeddings : emb_path;
      const std::string ann = ann_path.empty() ? cfg.eval_annotations : ann_path;
      std::optional<EmbeddingTable> table;
      if (!emb.empty()) table = EmbeddingTable::load(emb);
      EvalReport rep = evaluate_responses(hyps, refs, table ? &*table : nullptr);
      if (!ann.empty()) rep.ui = ui_report(read_annotations(ann));
      out << rep.table(label);
      if (rep.has_sim && rep.sim_skipped) out << "similarity skipped " << rep.sim_skipped << " uncovered pairs\n";
      if (!g.out.empty()) {
        nlohmann::json j = rep.to_json();
        j["run_config"] = cfg.to_json();
        write_json(g.out, j);
      }
      return 0;
    }

    if (exp->parsed()) {
      if (g.out.empty()) throw CLI::ValidationError("--out is required for export-latents");
      const Loaded m = load_model(g.checkpoint);
      std::vector<SentenceInput> sentences;
      std::size_t n_prompt = 0, n_resp = 0;
      std::size_t lineno = 0;
      for (const auto& line : read_lines(exp_input)) {
        const std::string id = std::to_string(lineno++);
        if (exp_role == "pair") {
          const auto tab = line.find('\t');
          if (tab == std::string::npos) continue;
          if (n_prompt < exp_limit) sentences.push_back({line.substr(0, tab), Role::Prompt, "p" + id}), ++n_prompt;
          if (n_resp < exp_limit) sentences.push_back({line.substr(tab + 1), Role::Response, "r" + id}), ++n_resp;
        } else if (n_prompt < exp_limit) {
          const Role role = role_from_string(exp_role);
          sentences.push_back({line, role, (role == Role::Prompt ? "p" : "r") + id});
          ++n_prompt;
        }
      }
      const ExportResult res = export_latents(m.model, m.vocab, sentences);
      const auto tmp = std::filesystem::path(g.out + ".tmp");
      write_latents_tsv(tmp, res.records);
      std::filesystem::rename(tmp, g.out);
      out << "wrote " << res.records.size() << " records to " << g.out << " (skipped " << res.skipped
          << " empty sentences)\n";
      return 0;
    }

    if (insp->parsed()) {
      nlohmann::json report = {{"run_config", cfg.to_json()}};
      bool did = false;
      if (!latents.empty()) {
        if (query.empty()) throw CLI::ValidationError("--latents needs --query");
        const auto records = read_latents_tsv(latents);
        const auto nn = nearest_neighbors(query, records, std::min(cfg.inspect_k, records.size() - 1),
                                          metric_from_string(cfg.inspect_metric));
        out << "nearest to " << query << " (" << cfg.inspect_metric << "):\n";
        std::map<std::string, const LatentRecord*> by_id;
        for (const auto& r : records) by_id[r.id] = &r;
        nlohmann::json list = nlohmann::json::array();
        for (const auto& n : nn) {
          out << "  " << n.id << '\t' << n.distance << '\t' << to_string(by_id[n.id]->role) << '\t'
              << by_id[n.id]->text << '\n';
          list.push_back({{"id", n.id}, {"distance", n.distance}});
        }
        report["neighbors"] = {{"query", query}, {"results", list}};
        did = true;
      }
      if (!pairs_path.empty()) {
        const Loaded m = load_model(g.checkpoint);
        const auto raw = read_pair_file(pairs_path);
        const auto pairs = tokenize_pairs(raw.raw, m.vocab);
        const PairingReport rep = pairing_test(m.model, pairs, cfg.inspect_samples, cfg.train.seed);
        out << "pairing test over " << rep.samples << " prompts: matched " << rep.matched_mean_dist
            << ", mismatched " << rep.mismatched_mean_dist << ", matched closer rate " << rep.matched_closer_rate
            << ", median gold rank " << rep.median_gold_rank << '\n';
        report["pairing"] = rep.to_json();
        did = true;
      }
      if (!did) throw CLI::ValidationError("inspect needs --latents with --query, or --pairs with --checkpoint");
      if (!g.out.empty()) write_json(g.out, report);
      return 0;
    }

    if (synth->parsed()) {
      if (g.out.empty()) throw CLI::ValidationError("--out is required for synth");
      const SynthCorpus corpus = generate_corpus(spec);
      write_corpus(g.out, corpus);
      out << "wrote " << corpus.train.size() << " training and " << corpus.test.size() << " test pairs ("
          << corpus.generic_pair_count() << " generic training pairs, " << corpus.words.size() << " words) to "
          << g.out << '\n';
      return 0;
    }
  } catch (const CLI::ValidationError& e) {
    err << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}

}  // namespace latentdial
