#include "kneedet/model.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <numeric>
#include <unordered_set>

#include "kneedet/fileio.hpp"
#include "kneedet/postprocess.hpp"

namespace kneedet {

namespace {

constexpr double kBatchnormEps = 1e-5;

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) {
    s.remove_prefix(1);
  }
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) {
    s.remove_suffix(1);
  }
  return s;
}

[[noreturn]] void fail(int line, const std::string& msg) {
  throw ParseError("cfg line " + std::to_string(line) + ": " + msg);
}

struct Entry {
  std::string key;
  std::string value;
  int line = 0;
};

struct Section {
  std::string name;
  int line = 0;
  std::vector<Entry> entries;
};

std::vector<Section> split_sections(std::string_view text) {
  std::vector<Section> sections;
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t eol = text.find('\n', pos);
    std::string_view line = text.substr(
        pos, eol == std::string_view::npos ? std::string_view::npos : eol - pos);
    pos = eol == std::string_view::npos ? text.size() + 1 : eol + 1;
    ++line_no;

    const std::size_t hash = line.find('#');
    if (hash != std::string_view::npos) {
      line = line.substr(0, hash);
    }
    line = trim(line);
    if (line.empty()) {
      continue;
    }
    if (line.front() == '[') {
      if (line.back() != ']') {
        fail(line_no, "malformed section header: " + std::string(line));
      }
      Section s;
      s.name = std::string(trim(line.substr(1, line.size() - 2)));
      s.line = line_no;
      sections.push_back(std::move(s));
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string_view::npos) {
      fail(line_no, "expected key=value, got: " + std::string(line));
    }
    if (sections.empty()) {
      fail(line_no, "key=value before any section");
    }
    Entry e;
    e.key = std::string(trim(line.substr(0, eq)));
    e.value = std::string(trim(line.substr(eq + 1)));
    e.line = line_no;
    if (e.key.empty()) {
      fail(line_no, "empty key");
    }
    sections.back().entries.push_back(std::move(e));
  }
  return sections;
}

int parse_int(const Entry& e) {
  int v = 0;
  const char* begin = e.value.data();
  const char* end = begin + e.value.size();
  const auto [ptr, ec] = std::from_chars(begin, end, v);
  if (ec != std::errc() || ptr != end) {
    fail(e.line, "key '" + e.key + "': malformed integer '" + e.value + "'");
  }
  return v;
}

double parse_double_token(std::string_view tok, const Entry& e) {
  double v = 0;
  const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size()) {
    fail(e.line, "key '" + e.key + "': malformed number '" + std::string(tok) + "'");
  }
  return v;
}

template <typename T, typename Parse>
std::vector<T> parse_list(const Entry& e, Parse parse) {
  std::vector<T> out;
  std::string_view rest = e.value;
  while (true) {
    const std::size_t comma = rest.find(',');
    const std::string_view tok = trim(rest.substr(0, comma));
    if (tok.empty()) {
      fail(e.line, "key '" + e.key + "': empty list element");
    }
    out.push_back(parse(tok));
    if (comma == std::string_view::npos) {
      break;
    }
    rest = rest.substr(comma + 1);
  }
  return out;
}

std::vector<int> parse_int_list(const Entry& e) {
  return parse_list<int>(e, [&](std::string_view tok) {
    int v = 0;
    const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || ptr != tok.data() + tok.size()) {
      fail(e.line, "key '" + e.key + "': malformed integer '" + std::string(tok) + "'");
    }
    return v;
  });
}

std::vector<double> parse_double_list(const Entry& e) {
  return parse_list<double>(e, [&](std::string_view tok) {
    return parse_double_token(tok, e);
  });
}

LayerKind kind_from_name(const std::string& name, int line) {
  if (name == "net") return LayerKind::net;
  if (name == "convolutional") return LayerKind::convolutional;
  if (name == "shortcut") return LayerKind::shortcut;
  if (name == "route") return LayerKind::route;
  if (name == "upsample") return LayerKind::upsample;
  if (name == "yolo") return LayerKind::yolo;
  fail(line, "unknown section [" + name + "]");
}

// Tracks which keys a section consumed so leftovers can be rejected.
class KeyedSection {
 public:
  explicit KeyedSection(const Section& s) : section_(s) {}

  const Entry* find(std::string_view key) {
    const Entry* found = nullptr;
    for (const Entry& e : section_.entries) {
      if (e.key == key) {
        if (found) {
          fail(e.line, "duplicate key '" + e.key + "'");
        }
        found = &e;
      }
    }
    if (found) {
      used_.insert(found->key);
    }
    return found;
  }

  const Entry& require(std::string_view key) {
    const Entry* e = find(key);
    if (!e) {
      fail(section_.line, "section [" + section_.name + "] is missing key '" +
                              std::string(key) + "'");
    }
    return *e;
  }

  int get_int(std::string_view key, int fallback) {
    const Entry* e = find(key);
    return e ? parse_int(*e) : fallback;
  }

  void finish() const {
    for (const Entry& e : section_.entries) {
      if (!used_.contains(e.key)) {
        fail(e.line, "unknown key '" + e.key + "' in section [" +
                         section_.name + "]");
      }
    }
  }

 private:
  const Section& section_;
  std::unordered_set<std::string> used_;
};

int resolve_reference(int raw, int layer_index, int line) {
  const int resolved = raw < 0 ? layer_index + raw : raw;
  if (resolved < 0 || resolved >= layer_index) {
    fail(line, "reference " + std::to_string(raw) + " at layer " +
                   std::to_string(layer_index) +
                   " does not resolve to an earlier layer");
  }
  return resolved;
}

}  // namespace

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::net: return "net";
    case LayerKind::convolutional: return "convolutional";
    case LayerKind::shortcut: return "shortcut";
    case LayerKind::route: return "route";
    case LayerKind::upsample: return "upsample";
    case LayerKind::yolo: return "yolo";
  }
  return "?";
}

std::vector<int> NetworkConfig::yolo_layers() const {
  std::vector<int> out;
  for (int i = 0; i < static_cast<int>(layers.size()); ++i) {
    if (layers[i].kind == LayerKind::yolo) {
      out.push_back(i);
    }
  }
  return out;
}

std::int64_t NetworkConfig::layer_param_count(int index) const {
  const LayerSpec& l = layers[index];
  if (l.kind != LayerKind::convolutional) {
    return 0;
  }
  const int in_c = index == 0 ? channels : output_shapes[index - 1].c;
  const std::int64_t kernel =
      static_cast<std::int64_t>(l.filters) * in_c * l.size * l.size;
  return kernel + (l.batch_normalize ? 4LL * l.filters : l.filters);
}

std::int64_t NetworkConfig::total_param_count() const {
  std::int64_t total = 0;
  for (int i = 0; i < static_cast<int>(layers.size()); ++i) {
    total += layer_param_count(i);
  }
  return total;
}

NetworkConfig parse_cfg(std::string_view text) {
  const std::vector<Section> sections = split_sections(text);
  if (sections.empty()) {
    throw ParseError("cfg is empty");
  }
  if (sections.front().name != "net") {
    fail(sections.front().line,
         "first section must be [net], got [" + sections.front().name + "]");
  }

  NetworkConfig cfg;
  {
    KeyedSection net(sections.front());
    cfg.width = parse_int(net.require("width"));
    cfg.height = parse_int(net.require("height"));
    cfg.channels = parse_int(net.require("channels"));
    net.finish();
    if (cfg.width <= 0 || cfg.height <= 0 || cfg.channels <= 0) {
      fail(sections.front().line, "[net] dimensions must be positive");
    }
  }

  for (std::size_t si = 1; si < sections.size(); ++si) {
    const Section& section = sections[si];
    const int layer_index = static_cast<int>(si) - 1;
    const LayerKind kind = kind_from_name(section.name, section.line);
    if (kind == LayerKind::net) {
      fail(section.line, "duplicate [net] section; [net] must come first");
    }

    const Shape in = layer_index == 0 ? cfg.input_shape()
                                      : cfg.output_shapes[layer_index - 1];
    LayerSpec l;
    l.kind = kind;
    Shape out = in;
    KeyedSection keys(section);

    switch (kind) {
      case LayerKind::convolutional: {
        l.filters = parse_int(keys.require("filters"));
        l.size = keys.get_int("size", 1);
        l.stride = keys.get_int("stride", 1);
        l.pad_flag = keys.get_int("pad", 0);
        l.batch_normalize = keys.get_int("batch_normalize", 0);
        if (const Entry* act = keys.find("activation")) {
          if (act->value == "linear") {
            l.activation = Activation::linear;
          } else if (act->value == "leaky") {
            l.activation = Activation::leaky;
          } else {
            fail(act->line, "unknown activation '" + act->value + "'");
          }
        }
        if (l.filters <= 0) fail(section.line, "filters must be positive");
        if (l.size <= 0 || l.size % 2 == 0) {
          fail(section.line, "convolution size must be odd and positive");
        }
        if (l.stride < 1) fail(section.line, "stride must be >= 1");
        if (l.pad_flag != 0 && l.pad_flag != 1) {
          fail(section.line, "pad must be 0 or 1");
        }
        if (l.batch_normalize != 0 && l.batch_normalize != 1) {
          fail(section.line, "batch_normalize must be 0 or 1");
        }
        const int p = l.padding();
        const int oh = (in.h + 2 * p - l.size) / l.stride + 1;
        const int ow = (in.w + 2 * p - l.size) / l.stride + 1;
        if (in.h + 2 * p - l.size < 0 || oh < 1 || ow < 1) {
          fail(section.line, "convolution output collapses below 1x1");
        }
        out = {l.filters, oh, ow};
        break;
      }
      case LayerKind::shortcut: {
        l.from = parse_int(keys.require("from"));
        l.from_resolved = resolve_reference(l.from, layer_index,
                                            keys.require("from").line);
        const Shape other = cfg.output_shapes[l.from_resolved];
        if (!(other == in)) {
          fail(section.line, "shortcut shapes differ: layer " +
                                 std::to_string(l.from_resolved) + " vs previous");
        }
        out = in;
        break;
      }
      case LayerKind::route: {
        const Entry& e = keys.require("layers");
        l.layers = parse_int_list(e);
        int channels = 0;
        int rh = -1, rw = -1;
        for (int raw : l.layers) {
          const int idx = resolve_reference(raw, layer_index, e.line);
          l.layers_resolved.push_back(idx);
          const Shape s = cfg.output_shapes[idx];
          if (rh < 0) {
            rh = s.h;
            rw = s.w;
          } else if (rh != s.h || rw != s.w) {
            fail(e.line, "route inputs have mismatched spatial sizes");
          }
          channels += s.c;
        }
        out = {channels, rh, rw};
        break;
      }
      case LayerKind::upsample: {
        l.factor = keys.get_int("stride", 2);
        if (l.factor < 1) fail(section.line, "upsample stride must be >= 1");
        out = {in.c, in.h * l.factor, in.w * l.factor};
        break;
      }
      case LayerKind::yolo: {
        if (const Entry* e = keys.find("anchors")) {
          const std::vector<double> flat = parse_double_list(*e);
          if (flat.empty() || flat.size() % 2 != 0) {
            fail(e->line, "anchors must be an even-length list of w,h pairs");
          }
          for (std::size_t i = 0; i + 1 < flat.size(); i += 2) {
            if (flat[i] <= 0 || flat[i + 1] <= 0) {
              fail(e->line, "anchors must be strictly positive");
            }
            l.anchors.emplace_back(flat[i], flat[i + 1]);
          }
        } else {
          l.anchors = default_anchors();
        }
        if (const Entry* e = keys.find("mask")) {
          l.mask = parse_int_list(*e);
        } else {
          l.mask.resize(l.anchors.size());
          std::iota(l.mask.begin(), l.mask.end(), 0);
        }
        for (int m : l.mask) {
          if (m < 0 || m >= static_cast<int>(l.anchors.size())) {
            fail(section.line, "mask index " + std::to_string(m) +
                                   " outside anchor list");
          }
        }
        l.classes = keys.get_int("classes", 4);
        if (l.classes < 1) fail(section.line, "classes must be >= 1");
        const int expected =
            static_cast<int>(l.mask.size()) * (5 + l.classes);
        if (in.c != expected) {
          fail(section.line,
               "yolo layer expects " + std::to_string(expected) +
                   " input channels for " + std::to_string(l.mask.size()) +
                   " anchors and " + std::to_string(l.classes) +
                   " classes, got " + std::to_string(in.c));
        }
        out = in;
        break;
      }
      case LayerKind::net:
        break;  // unreachable
    }

    keys.finish();
    cfg.layers.push_back(std::move(l));
    cfg.output_shapes.push_back(out);
  }
  return cfg;
}

NetworkConfig parse_cfg_file(const std::filesystem::path& path) {
  return parse_cfg(read_file_text(path));
}

std::string serialize_cfg(const NetworkConfig& cfg) {
  std::string out;
  const auto kv = [&out](std::string_view key, const std::string& value) {
    out += key;
    out += '=';
    out += value;
    out += '\n';
  };
  const auto kv_int = [&](std::string_view key, int v) {
    kv(key, std::to_string(v));
  };

  out += "[net]\n";
  kv_int("width", cfg.width);
  kv_int("height", cfg.height);
  kv_int("channels", cfg.channels);

  for (const LayerSpec& l : cfg.layers) {
    out += '\n';
    out += '[';
    out += to_string(l.kind);
    out += "]\n";
    switch (l.kind) {
      case LayerKind::convolutional:
        kv_int("filters", l.filters);
        kv_int("size", l.size);
        kv_int("stride", l.stride);
        kv_int("pad", l.pad_flag);
        kv_int("batch_normalize", l.batch_normalize);
        kv("activation", l.activation == Activation::leaky ? "leaky" : "linear");
        break;
      case LayerKind::shortcut:
        kv_int("from", l.from);
        break;
      case LayerKind::route: {
        std::string joined;
        for (std::size_t i = 0; i < l.layers.size(); ++i) {
          if (i) joined += ',';
          joined += std::to_string(l.layers[i]);
        }
        kv("layers", joined);
        break;
      }
      case LayerKind::upsample:
        kv_int("stride", l.factor);
        break;
      case LayerKind::yolo: {
        std::string joined;
        for (std::size_t i = 0; i < l.mask.size(); ++i) {
          if (i) joined += ',';
          joined += std::to_string(l.mask[i]);
        }
        kv("mask", joined);
        joined.clear();
        for (std::size_t i = 0; i < l.anchors.size(); ++i) {
          if (i) joined += ", ";
          joined += format_double_exact(l.anchors[i].first);
          joined += ',';
          joined += format_double_exact(l.anchors[i].second);
        }
        kv("anchors", joined);
        kv_int("classes", l.classes);
        break;
      }
      case LayerKind::net:
        break;
    }
  }
  return out;
}

void Model::refold() {
  fused_kernel.assign(config.layers.size(), {});
  fused_bias.assign(config.layers.size(), {});
  for (std::size_t i = 0; i < config.layers.size(); ++i) {
    const LayerSpec& l = config.layers[i];
    if (l.kind != LayerKind::convolutional) {
      continue;
    }
    const ConvWeights& cw = conv[i];
    if (!l.batch_normalize) {
      fused_kernel[i] = cw.kernel;
      fused_bias[i] = cw.bias;
      continue;
    }
    const std::size_t per_filter = cw.kernel.size() / l.filters;
    fused_kernel[i].resize(cw.kernel.size());
    fused_bias[i].resize(l.filters);
    for (int f = 0; f < l.filters; ++f) {
      const double denom = std::sqrt(cw.bn_var[f] + kBatchnormEps);
      const double scale = cw.bn_scale[f] / denom;
      for (std::size_t k = 0; k < per_filter; ++k) {
        fused_kernel[i][f * per_filter + k] = cw.kernel[f * per_filter + k] * scale;
      }
      fused_bias[i][f] = cw.bias[f] - cw.bn_scale[f] * cw.bn_mean[f] / denom;
    }
  }
}

namespace {

struct ByteReader {
  std::span<const std::uint8_t> data;
  std::size_t pos = 0;

  void need(std::size_t n, const std::string& what) {
    if (pos + n > data.size()) {
      throw ParseError("truncated weights file while reading " + what);
    }
  }
  std::uint32_t u32(const std::string& what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(data[pos + i]) << (8 * i);
    }
    pos += 4;
    return v;
  }
  std::uint64_t u64(const std::string& what) {
    const std::uint64_t lo = u32(what);
    const std::uint64_t hi = u32(what);
    return lo | (hi << 32);
  }
  float f32(const std::string& what) {
    return std::bit_cast<float>(u32(what));
  }
  void read_f32_block(std::vector<double>& out, std::size_t n,
                      const std::string& what) {
    out.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      out[i] = static_cast<double>(f32(what));
    }
  }
};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) {
    out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
  }
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  put_u32(out, static_cast<std::uint32_t>(v & 0xffffffffu));
  put_u32(out, static_cast<std::uint32_t>(v >> 32));
}

void put_f32_block(std::vector<std::uint8_t>& out, const std::vector<double>& v) {
  for (double d : v) {
    put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(d)));
  }
}

}  // namespace

Model load_weights(const NetworkConfig& config,
                   std::span<const std::uint8_t> payload) {
  ByteReader r{payload};
  Model m;
  m.config = config;
  m.conv.resize(config.layers.size());

  m.version_major = r.u32("version header");
  m.version_minor = r.u32("version header");
  m.version_revision = r.u32("version header");
  if (m.version_major > 2) {
    throw ParseError("unsupported weights version " +
                     std::to_string(m.version_major) + "." +
                     std::to_string(m.version_minor) + "." +
                     std::to_string(m.version_revision));
  }
  m.seen = (m.version_major * 10 + m.version_minor >= 2)
               ? r.u64("seen counter")
               : r.u32("seen counter");

  for (std::size_t i = 0; i < config.layers.size(); ++i) {
    const LayerSpec& l = config.layers[i];
    if (l.kind != LayerKind::convolutional) {
      continue;
    }
    const int in_c =
        i == 0 ? config.channels : config.output_shapes[i - 1].c;
    const std::size_t n_kernel =
        static_cast<std::size_t>(l.filters) * in_c * l.size * l.size;
    const std::string where = "layer " + std::to_string(i);
    ConvWeights& cw = m.conv[i];
    const std::size_t nf = static_cast<std::size_t>(l.filters);
    if (l.batch_normalize) {
      r.read_f32_block(cw.bias, nf, where + " batchnorm beta");
      r.read_f32_block(cw.bn_scale, nf, where + " batchnorm scale");
      r.read_f32_block(cw.bn_mean, nf, where + " batchnorm mean");
      r.read_f32_block(cw.bn_var, nf, where + " batchnorm variance");
    } else {
      r.read_f32_block(cw.bias, nf, where + " bias");
    }
    r.read_f32_block(cw.kernel, n_kernel, where + " kernel");
  }

  if (r.pos != payload.size()) {
    throw ParseError("trailing bytes in weights file: " +
                     std::to_string(payload.size() - r.pos) + " unread");
  }
  m.refold();
  return m;
}

std::vector<std::uint8_t> save_weights(const Model& m) {
  std::vector<std::uint8_t> out;
  put_u32(out, m.version_major);
  put_u32(out, m.version_minor);
  put_u32(out, m.version_revision);
  if (m.version_major * 10 + m.version_minor >= 2) {
    put_u64(out, m.seen);
  } else {
    put_u32(out, static_cast<std::uint32_t>(m.seen));
  }
  for (std::size_t i = 0; i < m.config.layers.size(); ++i) {
    const LayerSpec& l = m.config.layers[i];
    if (l.kind != LayerKind::convolutional) {
      continue;
    }
    const ConvWeights& cw = m.conv[i];
    put_f32_block(out, cw.bias);
    if (l.batch_normalize) {
      put_f32_block(out, cw.bn_scale);
      put_f32_block(out, cw.bn_mean);
      put_f32_block(out, cw.bn_var);
    }
    put_f32_block(out, cw.kernel);
  }
  return out;
}

Model load_weights_file(const NetworkConfig& config,
                        const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  try {
    return load_weights(config, bytes);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void save_weights_file(const Model& model, const std::filesystem::path& path) {
  write_file_atomic(path, save_weights(model));
}

}  // namespace kneedet
