#include "latact/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

namespace latact {

namespace {

constexpr char kMagic[8] = {'L', 'A', 'C', 'T', 'C', 'K', 'P', 'T'};

void put_u32(std::string& out, std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);
}

void put_u64(std::string& out, std::uint64_t v) {
  char b[8];
  std::memcpy(b, &v, 8);
  out.append(b, 8);
}

void put_str(std::string& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out += s;
}

struct Reader {
  const std::string& buf;
  std::size_t pos = 0;

  void need(std::size_t n, const char* what) const {
    if (pos + n > buf.size()) {
      throw CheckpointFormatError(std::string("checkpoint: truncated while reading ") + what);
    }
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v;
    std::memcpy(&v, buf.data() + pos, 4);
    pos += 4;
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v;
    std::memcpy(&v, buf.data() + pos, 8);
    pos += 8;
    return v;
  }
  std::string str(const char* what) {
    std::uint32_t n = u32(what);
    need(n, what);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

std::string meta_to_text(const std::map<std::string, std::string>& meta) {
  std::string out;
  for (const auto& [k, v] : meta) out += k + "=" + v + "\n";
  return out;
}

std::map<std::string, std::string> meta_from_text(const std::string& text) {
  std::map<std::string, std::string> meta;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw CheckpointFormatError("checkpoint: bad meta line " + line);
    meta[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return meta;
}

}  // namespace

void save_checkpoint(const std::string& path, Model<float>& model, const Vocabulary& vocab,
                     const ActTable& table, const std::map<std::string, std::string>& meta) {
  std::string out;
  out.append(kMagic, sizeof(kMagic));
  put_u32(out, Checkpoint::kVersion);

  std::string config_text;
  for (const auto& [k, v] : model.cfg.to_pairs()) config_text += k + "=" + v + "\n";
  put_str(out, config_text);
  put_str(out, meta_to_text(meta));

  std::string vocab_text = vocab.to_text();
  put_u64(out, fnv1a(vocab_text));
  put_str(out, vocab_text);

  auto params = model.parameters();
  put_u32(out, static_cast<std::uint32_t>(params.size()));
  std::uint64_t payload = 0;
  for (auto& p : params) {
    put_str(out, p.name);
    const auto& shape = p.tensor.shape();
    put_u32(out, static_cast<std::uint32_t>(shape.size()));
    for (int d : shape) put_u32(out, static_cast<std::uint32_t>(d));
    payload += p.tensor.numel();
  }
  put_u64(out, payload);
  for (auto& p : params) {
    out.append(reinterpret_cast<const char*>(p.tensor.data()),
               p.tensor.numel() * sizeof(float));
  }

  put_u32(out, static_cast<std::uint32_t>(table.entries.size()));
  put_u32(out, static_cast<std::uint32_t>(table.d_act));
  for (const auto& e : table.entries) {
    put_str(out, e.key);
    out.append(reinterpret_cast<const char*>(e.embedding.data()),
               e.embedding.size() * sizeof(float));
  }

  std::ofstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("checkpoint: cannot write " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw CheckpointError("checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("checkpoint: cannot read " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  std::string buf = ss.str();

  Reader r{buf};
  r.need(sizeof(kMagic), "magic");
  if (std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointFormatError("checkpoint: bad magic in " + path);
  }
  r.pos = sizeof(kMagic);
  std::uint32_t version = r.u32("version");
  if (version != Checkpoint::kVersion) {
    throw CheckpointVersionError("checkpoint: unsupported version " + std::to_string(version));
  }

  Checkpoint ckpt;
  std::string config_text = r.str("config");
  std::vector<std::pair<std::string, std::string>> kv;
  for (const auto& [k, v] : meta_from_text(config_text)) kv.push_back({k, v});
  ckpt.config = ModelConfig::from_pairs(kv);
  ckpt.meta = meta_from_text(r.str("meta"));

  std::uint64_t stored_hash = r.u64("vocab hash");
  std::string vocab_text = r.str("vocab");
  if (fnv1a(vocab_text) != stored_hash) {
    throw CheckpointHashError("checkpoint: vocabulary hash mismatch in " + path);
  }
  ckpt.vocab = Vocabulary::from_text(vocab_text);

  std::uint32_t n_tensors = r.u32("tensor count");
  struct Entry {
    std::string name;
    std::vector<int> shape;
    std::size_t numel;
  };
  std::vector<Entry> manifest;
  std::uint64_t expected = 0;
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    Entry e;
    e.name = r.str("tensor name");
    std::uint32_t ndim = r.u32("tensor rank");
    if (ndim == 0 || ndim > 8) throw CheckpointFormatError("checkpoint: bad rank for " + e.name);
    e.numel = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      std::uint32_t ext = r.u32("tensor extent");
      if (ext == 0) throw CheckpointFormatError("checkpoint: zero extent in " + e.name);
      e.shape.push_back(static_cast<int>(ext));
      e.numel *= ext;
    }
    expected += e.numel;
    manifest.push_back(std::move(e));
  }
  std::uint64_t payload = r.u64("payload length");
  if (payload != expected) {
    throw CheckpointFormatError("checkpoint: payload declares " + std::to_string(payload) +
                                " values, manifest needs " + std::to_string(expected));
  }
  r.need(payload * sizeof(float), "tensor payload");
  for (const auto& e : manifest) {
    std::vector<float> values(e.numel);
    std::memcpy(values.data(), buf.data() + r.pos, e.numel * sizeof(float));
    r.pos += e.numel * sizeof(float);
    ckpt.tensors.push_back({e.name, Tensor<float>::from_values(e.shape, std::move(values))});
  }

  std::uint32_t n_rows = r.u32("table rows");
  std::uint32_t d_act = r.u32("table width");
  ckpt.table.d_act = static_cast<int>(d_act);
  for (std::uint32_t i = 0; i < n_rows; ++i) {
    ActTable::Entry e;
    e.key = r.str("table act");
    e.act = parse_act(e.key);
    r.need(d_act * sizeof(float), "table embedding");
    e.embedding.resize(d_act);
    std::memcpy(e.embedding.data(), buf.data() + r.pos, d_act * sizeof(float));
    r.pos += d_act * sizeof(float);
    ckpt.table.entries.push_back(std::move(e));
  }
  return ckpt;
}

Model<float> model_from_checkpoint(const Checkpoint& ckpt, bool freeze_act_encoder) {
  Prng rng(0);
  Model<float> model = Model<float>::init(ckpt.config, rng, freeze_act_encoder);
  auto params = model.parameters();
  if (params.size() != ckpt.tensors.size()) {
    throw CheckpointFormatError("checkpoint: holds " + std::to_string(ckpt.tensors.size()) +
                                " tensors, model needs " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& stored = ckpt.tensors[i];
    if (stored.name != params[i].name) {
      throw CheckpointFormatError("checkpoint: tensor " + std::to_string(i) + " is " +
                                  stored.name + ", expected " + params[i].name);
    }
    if (stored.tensor.shape() != params[i].tensor.shape()) {
      throw CheckpointFormatError("checkpoint: shape mismatch for " + stored.name);
    }
    std::copy(stored.tensor.data(), stored.tensor.data() + stored.tensor.numel(),
              params[i].tensor.data());
  }
  return model;
}

}  // namespace latact
