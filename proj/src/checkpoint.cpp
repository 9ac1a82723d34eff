#include "latentdial/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace latentdial {
namespace {

constexpr char kMagic[8] = {'L', 'D', 'I', 'A', 'L', 'C', 'K', 'P'};

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes little-endian");

template <class T>
void write_pod(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error("checkpoint truncated");
  return v;
}

}  // namespace

nlohmann::json to_json(const ModelConfig& c) {
  return {
      {"kind", to_string(c.kind)},
      {"vocab_size", c.vocab_size},
      {"embedding_dim", c.embedding_dim},
      {"k_correlated", c.k_correlated},
      {"k_uncorrelated", c.k_uncorrelated},
      {"decoder_hidden", c.decoder_hidden},
      {"encoder_layers", c.encoder_layers},
      {"decoder_layers", c.decoder_layers},
      {"attention", c.attention},
      {"attention_bottleneck_dim", c.attention_bottleneck_dim},
      {"init_scale", c.init_scale},
  };
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.kind = model_kind_from_string(j.at("kind").get<std::string>());
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.embedding_dim = j.at("embedding_dim").get<std::size_t>();
  c.k_correlated = j.at("k_correlated").get<std::size_t>();
  c.k_uncorrelated = j.at("k_uncorrelated").get<std::size_t>();
  c.decoder_hidden = j.at("decoder_hidden").get<std::size_t>();
  c.encoder_layers = j.at("encoder_layers").get<int>();
  c.decoder_layers = j.at("decoder_layers").get<int>();
  c.attention = j.at("attention").get<bool>();
  c.attention_bottleneck_dim = j.at("attention_bottleneck_dim").get<std::size_t>();
  c.init_scale = j.at("init_scale").get<double>();
  return c;
}

Checkpoint snapshot(const DialogueModel& model, const Vocabulary& vocab) {
  Checkpoint ck;
  ck.model_config = model.config();
  ck.vocab = vocab;
  for (const Param* p : model.params()) ck.tensors[p->name] = p->value;
  return ck;
}

DialogueModel Checkpoint::make_model() const {
  DialogueModel model(model_config, 0);
  for (Param* p : model.params()) {
    auto it = tensors.find(p->name);
    if (it == tensors.end()) throw std::runtime_error("checkpoint is missing tensor " + p->name);
    if (!it->second.same_shape(p->value))
      throw std::runtime_error("checkpoint tensor " + p->name + " has the wrong shape");
    p->value = it->second;
  }
  return model;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  nlohmann::json header;
  header["format_version"] = kCheckpointVersion;
  header["model"] = to_json(ck.model_config);
  header["vocab"] = {{"hash", ck.vocab.hash()}, {"tokens", ck.vocab.tokens()}};
  header["extra"] = ck.extra;
  auto& index = header["tensors"] = nlohmann::json::array();
  for (const auto& [name, m] : ck.tensors) index.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + tmp.string());
    out.write(kMagic, sizeof kMagic);
    write_pod<std::uint32_t>(out, kCheckpointVersion);
    write_pod<std::uint64_t>(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, m] : ck.tensors)
      out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
    out.flush();
    if (!out) {
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw std::runtime_error("failed writing checkpoint: " + tmp.string());
    }
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path.string());
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0)
    throw std::runtime_error("not a checkpoint file: " + path.string());
  const auto version = read_pod<std::uint32_t>(in);
  if (version != kCheckpointVersion)
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  const auto len = read_pod<std::uint64_t>(in);
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw std::runtime_error("checkpoint header truncated");
  const auto header = nlohmann::json::parse(text);

  Checkpoint ck;
  ck.model_config = model_config_from_json(header.at("model"));
  ck.vocab = Vocabulary(header.at("vocab").at("tokens").get<std::vector<std::string>>());
  if (ck.vocab.hash() != header.at("vocab").at("hash").get<std::uint64_t>())
    throw std::runtime_error("checkpoint vocabulary hash mismatch");
  ck.extra = header.value("extra", nlohmann::json::object());
  for (const auto& t : header.at("tensors")) {
    Matrix m(t.at("rows").get<std::size_t>(), t.at("cols").get<std::size_t>());
    in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
    if (!in) throw std::runtime_error("checkpoint tensor data truncated");
    ck.tensors.emplace(t.at("name").get<std::string>(), std::move(m));
  }
  return ck;
}

}  // namespace latentdial
