#include "flexquant/model.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

namespace flexquant {

namespace {

constexpr float kNormEps = 1e-5f;
constexpr std::array<char, 4> kWeightMagic = {'F', 'Q', 'W', '1'};

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::uint64_t parse_uint(std::string_view key, std::string_view value) {
  std::uint64_t out = 0;
  const auto* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc{} || ptr != end) {
    throw std::invalid_argument("model config: bad value for '" + std::string(key) + "': " +
                                std::string(value));
  }
  return out;
}

std::vector<ModuleId> parse_module_list(std::string_view value) {
  std::vector<ModuleId> out;
  while (!value.empty()) {
    const auto comma = value.find(',');
    const auto item = trim(value.substr(0, comma));
    value = comma == std::string_view::npos ? std::string_view{} : value.substr(comma + 1);
    if (item.empty()) continue;
    const auto colon = item.find(':');
    if (colon == std::string_view::npos) {
      throw std::invalid_argument("model config: module must be layer:KIND, got " + std::string(item));
    }
    ModuleId id;
    id.layer = static_cast<std::uint32_t>(parse_uint("disabled_modules", trim(item.substr(0, colon))));
    id.kind = parse_module_kind(trim(item.substr(colon + 1)));
    out.push_back(id);
  }
  return out;
}

// y[rows x out] = x[rows x in] * w[in x out]
void matmul(const float* x, std::size_t rows, std::size_t in, const float* w, std::size_t out,
            float* y) {
  std::fill(y, y + rows * out, 0.0f);
  for (std::size_t r = 0; r < rows; ++r) {
    float* yr = y + r * out;
    const float* xr = x + r * in;
    for (std::size_t i = 0; i < in; ++i) {
      const float xv = xr[i];
      const float* wi = w + i * out;
      for (std::size_t j = 0; j < out; ++j) yr[j] += xv * wi[j];
    }
  }
}

void rms_norm(const float* x, std::size_t rows, std::size_t d, float* out) {
  for (std::size_t r = 0; r < rows; ++r) {
    const float* xr = x + r * d;
    float ss = 0.0f;
    for (std::size_t j = 0; j < d; ++j) ss += xr[j] * xr[j];
    const float inv = 1.0f / std::sqrt(ss / static_cast<float>(d) + kNormEps);
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = xr[j] * inv;
  }
}

float gelu(float v) {
  constexpr float kC = 0.7978845608028654f;  // sqrt(2/pi)
  return 0.5f * v * (1.0f + std::tanh(kC * (v + 0.044715f * v * v * v)));
}

void attention_block(std::vector<float>& x, const WeightBlock& block, const ModelConfig& cfg,
                     std::size_t seq) {
  const std::size_t d = cfg.d_model;
  const std::size_t dd = d * d;
  const std::size_t heads = cfg.n_heads;
  const std::size_t dh = d / heads;
  const float* wq = block.values.data();
  const float* wk = wq + dd;
  const float* wv = wk + dd;
  const float* wo = wv + dd;

  std::vector<float> h(seq * d), q(seq * d), k(seq * d), v(seq * d), o(seq * d, 0.0f);
  rms_norm(x.data(), seq, d, h.data());
  matmul(h.data(), seq, d, wq, d, q.data());
  matmul(h.data(), seq, d, wk, d, k.data());
  matmul(h.data(), seq, d, wv, d, v.data());

  const float scale = 1.0f / std::sqrt(static_cast<float>(dh));
  std::vector<float> scores(seq);
  for (std::size_t head = 0; head < heads; ++head) {
    const std::size_t off = head * dh;
    for (std::size_t t = 0; t < seq; ++t) {
      float max_score = -INFINITY;
      for (std::size_t s = 0; s <= t; ++s) {
        float dot = 0.0f;
        for (std::size_t j = 0; j < dh; ++j) dot += q[t * d + off + j] * k[s * d + off + j];
        scores[s] = dot * scale;
        max_score = std::max(max_score, scores[s]);
      }
      float denom = 0.0f;
      for (std::size_t s = 0; s <= t; ++s) {
        scores[s] = std::exp(scores[s] - max_score);
        denom += scores[s];
      }
      float* ot = o.data() + t * d + off;
      for (std::size_t s = 0; s <= t; ++s) {
        const float p = scores[s] / denom;
        for (std::size_t j = 0; j < dh; ++j) ot[j] += p * v[s * d + off + j];
      }
    }
  }
  matmul(o.data(), seq, d, wo, d, h.data());
  for (std::size_t i = 0; i < x.size(); ++i) x[i] += h[i];
}

void mlp_block(std::vector<float>& x, const WeightBlock& block, const ModelConfig& cfg,
               std::size_t seq) {
  const std::size_t d = cfg.d_model;
  const std::size_t ff = cfg.d_ff;
  const float* w_in = block.values.data();
  const float* w_out = w_in + d * ff;

  std::vector<float> h(seq * d), u(seq * ff);
  rms_norm(x.data(), seq, d, h.data());
  matmul(h.data(), seq, d, w_in, ff, u.data());
  for (auto& val : u) val = gelu(val);
  matmul(u.data(), seq, ff, w_out, d, h.data());
  for (std::size_t i = 0; i < x.size(); ++i) x[i] += h[i];
}

void write_u32(std::ostream& out, std::uint32_t v) {
  const std::array<unsigned char, 4> b = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                          static_cast<unsigned char>(v >> 16),
                                          static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b.data()), 4);
}

std::uint32_t read_u32(std::istream& in) {
  std::array<unsigned char, 4> b{};
  if (!in.read(reinterpret_cast<char*>(b.data()), 4)) throw std::runtime_error("weight file: truncated header");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_floats(std::ostream& out, std::span<const float> values) {
  for (float f : values) write_u32(out, std::bit_cast<std::uint32_t>(f));
}

std::vector<float> read_floats(std::istream& in, std::size_t n) {
  std::vector<float> out(n);
  for (auto& f : out) {
    std::array<unsigned char, 4> b{};
    if (!in.read(reinterpret_cast<char*>(b.data()), 4)) throw std::runtime_error("weight file: truncated body");
    f = std::bit_cast<float>(static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
                             (static_cast<std::uint32_t>(b[2]) << 16) |
                             (static_cast<std::uint32_t>(b[3]) << 24));
  }
  return out;
}

}  // namespace

std::string_view to_string(ModuleKind kind) { return kind == ModuleKind::Attn ? "ATTN" : "MLP"; }

ModuleKind parse_module_kind(std::string_view text) {
  if (text == "ATTN" || text == "attn") return ModuleKind::Attn;
  if (text == "MLP" || text == "mlp") return ModuleKind::Mlp;
  throw std::invalid_argument("unknown module kind: " + std::string(text));
}

std::string to_string(const ModuleId& id) {
  return std::to_string(id.layer) + ":" + std::string(to_string(id.kind));
}

void ModelConfig::validate() const {
  if (vocab_size < 2) throw std::invalid_argument("vocab_size must be >= 2");
  if (n_layers < 1) throw std::invalid_argument("n_layers must be >= 1");
  if (d_model == 0 || n_heads == 0 || d_ff == 0) throw std::invalid_argument("dimensions must be positive");
  if (d_model % n_heads != 0) throw std::invalid_argument("d_model must be divisible by n_heads");
  if (max_context < 1) throw std::invalid_argument("max_context must be >= 1");
  for (const auto& id : disabled_modules) {
    if (id.layer >= n_layers) throw std::invalid_argument("disabled module outside layer range: " + to_string(id));
  }
  if (list_modules(*this).empty()) throw std::invalid_argument("every module is disabled");
}

bool ModelConfig::is_enabled(const ModuleId& id) const {
  return std::find(disabled_modules.begin(), disabled_modules.end(), id) == disabled_modules.end();
}

ModelConfig complexity_check_preset() {
  ModelConfig cfg;
  cfg.n_layers = 33;
  cfg.d_model = 16;
  cfg.n_heads = 2;
  cfg.d_ff = 32;
  return cfg;
}

ModelConfig parse_model_config(std::string_view text) {
  ModelConfig cfg;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    auto line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw std::invalid_argument("model config line " + std::to_string(line_no) + ": expected key = value");
    }
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    if (key == "vocab_size") cfg.vocab_size = parse_uint(key, value);
    else if (key == "d_model") cfg.d_model = parse_uint(key, value);
    else if (key == "n_layers") cfg.n_layers = parse_uint(key, value);
    else if (key == "n_heads") cfg.n_heads = parse_uint(key, value);
    else if (key == "d_ff") cfg.d_ff = parse_uint(key, value);
    else if (key == "max_context") cfg.max_context = parse_uint(key, value);
    else if (key == "seed") cfg.seed = parse_uint(key, value);
    else if (key == "disabled_modules") cfg.disabled_modules = parse_module_list(value);
    else throw std::invalid_argument("model config: unknown key '" + std::string(key) + "'");
  }
  cfg.validate();
  return cfg;
}

ModelConfig load_model_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open model config: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_model_config(ss.str());
}

std::string format_model_config(const ModelConfig& cfg) {
  std::ostringstream out;
  out << "vocab_size = " << cfg.vocab_size << "\n"
      << "d_model = " << cfg.d_model << "\n"
      << "n_layers = " << cfg.n_layers << "\n"
      << "n_heads = " << cfg.n_heads << "\n"
      << "d_ff = " << cfg.d_ff << "\n"
      << "max_context = " << cfg.max_context << "\n"
      << "seed = " << cfg.seed << "\n";
  if (!cfg.disabled_modules.empty()) {
    out << "disabled_modules = ";
    for (std::size_t i = 0; i < cfg.disabled_modules.size(); ++i) {
      out << (i ? "," : "") << to_string(cfg.disabled_modules[i]);
    }
    out << "\n";
  }
  return out.str();
}

std::vector<ModuleId> list_modules(const ModelConfig& config) {
  std::vector<ModuleId> out;
  out.reserve(config.n_layers * 2);
  for (std::uint32_t layer = 0; layer < config.n_layers; ++layer) {
    for (auto kind : {ModuleKind::Attn, ModuleKind::Mlp}) {
      const ModuleId id{layer, kind};
      if (config.is_enabled(id)) out.push_back(id);
    }
  }
  return out;
}

std::size_t module_param_count(const ModelConfig& config, ModuleKind kind) {
  return kind == ModuleKind::Attn ? 4 * config.d_model * config.d_model : 2 * config.d_model * config.d_ff;
}

std::size_t total_quantizable_params(const ModelConfig& config) {
  std::size_t total = 0;
  for (const auto& id : list_modules(config)) total += module_param_count(config, id.kind);
  return total;
}

Model Model::build(const ModelConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(config.d_model));
  auto draw = [&] {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    return static_cast<float>((2.0 * u - 1.0) * bound);
  };

  std::vector<float> embedding(config.vocab_size * config.d_model);
  for (auto& w : embedding) w = draw();

  std::vector<WeightBlock> blocks;
  for (const auto& id : list_modules(config)) {
    WeightBlock block{id.kind, std::vector<float>(module_param_count(config, id.kind))};
    for (auto& w : block.values) w = draw();
    blocks.push_back(std::move(block));
  }
  return from_weights(config, std::move(embedding), std::move(blocks));
}

Model Model::from_weights(const ModelConfig& config, std::vector<float> embedding,
                          std::vector<WeightBlock> blocks) {
  config.validate();
  Model model;
  model.config_ = config;
  model.modules_ = list_modules(config);
  if (embedding.size() != config.vocab_size * config.d_model) {
    throw std::invalid_argument("embedding has wrong size");
  }
  if (blocks.size() != model.modules_.size()) throw std::invalid_argument("module block count mismatch");
  model.embedding_ = std::move(embedding);
  model.unembedding_.resize(model.embedding_.size());
  for (std::size_t v = 0; v < config.vocab_size; ++v) {
    for (std::size_t j = 0; j < config.d_model; ++j) {
      model.unembedding_[j * config.vocab_size + v] = model.embedding_[v * config.d_model + j];
    }
  }
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const auto& id = model.modules_[i];
    if (blocks[i].kind != id.kind || blocks[i].values.size() != module_param_count(config, id.kind)) {
      throw std::invalid_argument("weight block shape mismatch for module " + to_string(id));
    }
    model.blocks_.push_back(std::make_shared<const WeightBlock>(std::move(blocks[i])));
  }
  return model;
}

std::size_t Model::module_index(const ModuleId& id) const {
  const auto it = std::lower_bound(modules_.begin(), modules_.end(), id);
  if (it == modules_.end() || *it != id) throw std::out_of_range("module not in model: " + to_string(id));
  return static_cast<std::size_t>(it - modules_.begin());
}

ModelView::ModelView(const Model& base) : base_(&base), overrides_(base.modules().size()) {}

ModelView& ModelView::override_module(std::size_t module_index, std::shared_ptr<const WeightBlock> block) {
  const auto& id = base_->modules().at(module_index);
  if (block && (block->kind != id.kind || block->values.size() != base_->block(module_index).values.size())) {
    throw std::invalid_argument("override shape mismatch for module " + to_string(id));
  }
  overrides_[module_index] = std::move(block);
  return *this;
}

ModelView& ModelView::override_module(const ModuleId& id, std::shared_ptr<const WeightBlock> block) {
  return override_module(base_->module_index(id), std::move(block));
}

const WeightBlock& ModelView::block(std::size_t module_index) const {
  const auto& o = overrides_.at(module_index);
  return o ? *o : base_->block(module_index);
}

Logits forward(const ModelView& view, std::span<const Token> tokens) {
  const Model& model = view.base();
  const ModelConfig& cfg = model.config();
  if (tokens.empty()) throw std::invalid_argument("forward: empty token sequence");
  if (tokens.size() > cfg.max_context) throw std::invalid_argument("forward: sequence longer than max_context");
  for (Token t : tokens) {
    if (t >= cfg.vocab_size) throw std::invalid_argument("forward: token id out of range");
  }

  const std::size_t seq = tokens.size();
  const std::size_t d = cfg.d_model;
  const auto emb = model.embedding();
  const float pos_scale = 1.0f / std::sqrt(static_cast<float>(d));

  std::vector<float> x(seq * d);
  for (std::size_t t = 0; t < seq; ++t) {
    for (std::size_t j = 0; j < d; ++j) {
      const double freq = std::pow(10000.0, -static_cast<double>(j / 2 * 2) / static_cast<double>(d));
      const double angle = static_cast<double>(t) * freq;
      const float pe = static_cast<float>(j % 2 == 0 ? std::sin(angle) : std::cos(angle));
      x[t * d + j] = emb[tokens[t] * d + j] + pos_scale * pe;
    }
  }

  const auto& modules = model.modules();
  for (std::size_t i = 0; i < modules.size(); ++i) {
    if (modules[i].kind == ModuleKind::Attn) {
      attention_block(x, view.block(i), cfg, seq);
    } else {
      mlp_block(x, view.block(i), cfg, seq);
    }
  }

  std::vector<float> h(seq * d);
  rms_norm(x.data(), seq, d, h.data());
  Logits logits{seq, cfg.vocab_size, std::vector<float>(seq * cfg.vocab_size)};
  matmul(h.data(), seq, d, model.unembedding().data(), cfg.vocab_size, logits.values.data());
  return logits;
}

void save_weights(const Model& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write weight file: " + path.string());
  const auto& cfg = model.config();
  out.write(kWeightMagic.data(), kWeightMagic.size());
  for (std::size_t v : {cfg.vocab_size, cfg.d_model, cfg.n_layers, cfg.n_heads, cfg.d_ff, model.modules().size()}) {
    write_u32(out, static_cast<std::uint32_t>(v));
  }
  write_floats(out, model.embedding());
  for (std::size_t i = 0; i < model.modules().size(); ++i) write_floats(out, model.block(i).values);
  if (!out) throw std::runtime_error("error writing weight file: " + path.string());
}

Model load_weights(const ModelConfig& config, const std::filesystem::path& path) {
  config.validate();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open weight file: " + path.string());
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kWeightMagic) {
    throw std::runtime_error("weight file: bad magic in " + path.string());
  }
  const auto modules = list_modules(config);
  const std::array<std::size_t, 6> expected = {config.vocab_size, config.d_model, config.n_layers,
                                               config.n_heads,    config.d_ff,    modules.size()};
  for (std::size_t want : expected) {
    if (read_u32(in) != want) throw std::runtime_error("weight file: header does not match model config");
  }
  auto embedding = read_floats(in, config.vocab_size * config.d_model);
  std::vector<WeightBlock> blocks;
  for (const auto& id : modules) {
    blocks.push_back({id.kind, read_floats(in, module_param_count(config, id.kind))});
  }
  if (in.peek() != std::char_traits<char>::eof()) throw std::runtime_error("weight file: trailing bytes");
  return Model::from_weights(config, std::move(embedding), std::move(blocks));
}

}  // namespace flexquant
