#include "dhs/serialization.hpp"

#include <sstream>

#include "dhs/text_format.hpp"

namespace dhs {

namespace {

std::string join(const Eigen::VectorXd& v) {
  std::string out;
  for (Index i = 0; i < v.size(); ++i) {
    if (i) out += ' ';
    out += text::format_double(v(i));
  }
  return out;
}

void write_gru(std::string& out, const RnnModel& m) {
  out += "n_u " + std::to_string(m.input_size()) + "\n";
  out += "n_y " + std::to_string(m.output_size()) + "\n";
  out += "layers";
  for (Index n : m.layers()) out += " " + std::to_string(n);
  out += "\nfeedthrough " + std::string(m.feedthrough() ? "1" : "0") + "\n";
  out += "input_mean " + join(m.input_normalization().mean) + "\n";
  out += "input_std " + join(m.input_normalization().std) + "\n";
  out += "output_mean " + join(m.output_normalization().mean) + "\n";
  out += "output_std " + join(m.output_normalization().std) + "\n";
  const Eigen::VectorXd theta = m.parameters();
  out += "parameters " + std::to_string(theta.size()) + "\n";
  for (Index i = 0; i < theta.size(); i += 8) {
    out += join(theta.segment(i, std::min<Index>(8, theta.size() - i))) + "\n";
  }
}

std::string source_token(const InputSource& s) {
  switch (s.kind) {
    case SourceKind::model_input: return "in:" + std::to_string(s.index);
    case SourceKind::cumulative_demand: return "cum:" + std::to_string(s.index);
    case SourceKind::subnet_output: return "sub:" + std::to_string(s.index) + "." + std::to_string(s.slot);
  }
  return "?";
}

// Sequential reader over whitespace-tokenized lines.
class Reader {
 public:
  explicit Reader(const std::string& content) {
    std::istringstream in(content);
    std::string line;
    int number = 0;
    while (std::getline(in, line)) {
      ++number;
      auto tok = text::split_ws(line);
      if (!tok.empty() && tok[0][0] != '#') lines_.push_back({number, std::move(tok)});
    }
  }

  const std::vector<std::string>& next(const std::string& key, std::size_t min_fields = 1) {
    if (pos_ >= lines_.size()) throw ParseError(last_line(), "unexpected end of model file, expected '" + key + "'");
    const auto& l = lines_[pos_++];
    if (l.tokens[0] != key) throw ParseError(l.number, "expected '" + key + "', found '" + l.tokens[0] + "'");
    if (l.tokens.size() < min_fields + 1) throw ParseError(l.number, "'" + key + "' is missing values");
    line_ = l.number;
    return l.tokens;
  }
  const std::vector<std::string>& raw() {
    if (pos_ >= lines_.size()) throw ParseError(last_line(), "unexpected end of model file");
    line_ = lines_[pos_].number;
    return lines_[pos_++].tokens;
  }
  int line() const { return line_; }

 private:
  int last_line() const { return lines_.empty() ? 0 : lines_.back().number; }
  struct L {
    int number;
    std::vector<std::string> tokens;
  };
  std::vector<L> lines_;
  std::size_t pos_ = 0;
  int line_ = 0;
};

Index read_index(Reader& r, const std::string& key) {
  const auto& t = r.next(key);
  return static_cast<Index>(text::parse_int(t[1], r.line()));
}

Eigen::VectorXd read_vector(Reader& r, const std::string& key, Index n) {
  const auto& t = r.next(key);
  if (static_cast<Index>(t.size()) != n + 1) throw ParseError(r.line(), "'" + key + "' has the wrong length");
  Eigen::VectorXd v(n);
  for (Index i = 0; i < n; ++i) v(i) = text::parse_double(t[static_cast<std::size_t>(i + 1)], r.line());
  return v;
}

RnnModel read_gru(Reader& r) {
  const Index n_u = read_index(r, "n_u");
  const Index n_y = read_index(r, "n_y");
  const auto& lt = r.next("layers");
  std::vector<Index> layers;
  for (std::size_t i = 1; i < lt.size(); ++i) layers.push_back(static_cast<Index>(text::parse_int(lt[i], r.line())));
  const bool ft = read_index(r, "feedthrough") != 0;
  RnnModel m(n_u, layers, n_y, ft);
  Normalization in{read_vector(r, "input_mean", n_u), read_vector(r, "input_std", n_u)};
  Normalization out{read_vector(r, "output_mean", n_y), read_vector(r, "output_std", n_y)};
  m.set_normalization(std::move(in), std::move(out));
  const Index count = read_index(r, "parameters");
  if (count != m.parameter_count()) throw ParseError(r.line(), "parameter count does not match the architecture");
  Eigen::VectorXd theta(count);
  Index k = 0;
  while (k < count) {
    const auto& t = r.raw();
    for (const auto& s : t) {
      if (k >= count) throw ParseError(r.line(), "too many parameter values");
      theta(k++) = text::parse_double(s, r.line());
    }
  }
  m.set_parameters(theta);
  return m;
}

InputSource parse_source(const std::string& s, int line) {
  auto colon = s.find(':');
  if (colon == std::string::npos) throw ParseError(line, "bad input source '" + s + "'");
  const std::string tag = s.substr(0, colon);
  const std::string rest = s.substr(colon + 1);
  if (tag == "in") return {SourceKind::model_input, static_cast<int>(text::parse_int(rest, line)), 0};
  if (tag == "cum") return {SourceKind::cumulative_demand, static_cast<int>(text::parse_int(rest, line)), 0};
  if (tag == "sub") {
    auto dot = rest.find('.');
    if (dot == std::string::npos) throw ParseError(line, "bad subnet source '" + s + "'");
    return {SourceKind::subnet_output, static_cast<int>(text::parse_int(rest.substr(0, dot), line)),
            static_cast<int>(text::parse_int(rest.substr(dot + 1), line))};
  }
  throw ParseError(line, "unknown input source '" + s + "'");
}

}  // namespace

std::string format_model(const SequenceModel& m, const std::string& fingerprint) {
  std::string out = "dhs-model v1\n";
  if (!fingerprint.empty()) out += "# config_fingerprint=" + fingerprint + "\n";
  if (const auto* g = dynamic_cast<const RnnModel*>(&m)) {
    out += "kind gru\n";
    write_gru(out, *g);
  } else if (const auto* p = dynamic_cast<const PiRnnModel*>(&m)) {
    out += "kind pi-gru\n";
    const auto& rg = p->reduced_graph();
    out += "reduced_graph_fingerprint " + rg.fingerprint() + "\n";
    out += "reduced_nodes";
    for (auto n : rg.nodes) out += " " + std::to_string(n.index);
    out += "\nreduced_edges " + std::to_string(rg.edges.size());
    for (const auto& [a, b] : rg.edges) out += " " + std::to_string(a) + ">" + std::to_string(b);
    out += "\nsubnets " + std::to_string(p->specs().size()) + "\n";
    for (std::size_t i = 0; i < p->specs().size(); ++i) {
      const auto& s = p->specs()[i];
      out += "subnet " + std::to_string(i) + " " + (s.role == SubnetRole::load ? "load" : "return") + " " +
             std::to_string(s.node) + " " + std::to_string(s.states) + "\n";
      out += "inputs";
      for (const auto& src : s.inputs) out += " " + source_token(src);
      out += "\noutputs";
      for (Index c : s.outputs) out += " " + std::to_string(c);
      out += "\n";
      write_gru(out, p->subnets()[i]);
    }
  } else {
    throw std::invalid_argument("unsupported model type for serialization");
  }
  out += "end\n";
  return out;
}

std::unique_ptr<SequenceModel> parse_model(const std::string& content, const NetworkGraph* topology) {
  Reader r(content);
  const auto& head = r.raw();
  if (head.size() != 2 || head[0] != "dhs-model") throw ParseError(r.line(), "not a dhs-model file");
  if (head[1] != "v1") throw ParseError(r.line(), "unsupported model format version '" + head[1] + "'");
  const std::string kind = r.next("kind")[1];
  std::unique_ptr<SequenceModel> model;
  if (kind == "gru") {
    model = std::make_unique<RnnModel>(read_gru(r));
  } else if (kind == "pi-gru") {
    const std::string stored = r.next("reduced_graph_fingerprint")[1];
    ReducedGraph rg;
    const auto& nt = r.next("reduced_nodes");
    for (std::size_t i = 1; i < nt.size(); ++i) rg.nodes.push_back({static_cast<int>(text::parse_int(nt[i], r.line()))});
    const auto& et = r.next("reduced_edges", 0);
    if (et.size() < 2) throw ParseError(r.line(), "'reduced_edges' needs a count");
    const auto n_edges = static_cast<std::size_t>(text::parse_int(et[1], r.line()));
    if (et.size() != n_edges + 2) throw ParseError(r.line(), "edge count mismatch");
    for (std::size_t i = 2; i < et.size(); ++i) {
      auto gt = et[i].find('>');
      if (gt == std::string::npos) throw ParseError(r.line(), "bad edge '" + et[i] + "'");
      rg.edges.push_back({static_cast<int>(text::parse_int(et[i].substr(0, gt), r.line())),
                          static_cast<int>(text::parse_int(et[i].substr(gt + 1), r.line()))});
    }
    if (rg.fingerprint() != stored) throw ParseError(r.line(), "reduced graph does not match its fingerprint");
    if (topology && reduce_graph(*topology).fingerprint() != stored) {
      throw std::runtime_error("model wiring does not match the supplied topology (fingerprint " + stored + ")");
    }
    const auto n = static_cast<std::size_t>(read_index(r, "subnets"));
    std::vector<SubnetSpec> specs;
    std::vector<RnnModel> subnets;
    for (std::size_t i = 0; i < n; ++i) {
      const auto& st = r.next("subnet", 4);
      if (text::parse_int(st[1], r.line()) != static_cast<long long>(i)) throw ParseError(r.line(), "subnets out of order");
      SubnetSpec s;
      if (st[2] == "load") {
        s.role = SubnetRole::load;
      } else if (st[2] == "return") {
        s.role = SubnetRole::ret;
      } else {
        throw ParseError(r.line(), "unknown subnet role '" + st[2] + "'");
      }
      s.node = static_cast<int>(text::parse_int(st[3], r.line()));
      s.states = static_cast<Index>(text::parse_int(st[4], r.line()));
      const auto& it = r.next("inputs");
      for (std::size_t k = 1; k < it.size(); ++k) s.inputs.push_back(parse_source(it[k], r.line()));
      const auto& ot = r.next("outputs");
      for (std::size_t k = 1; k < ot.size(); ++k) s.outputs.push_back(static_cast<Index>(text::parse_int(ot[k], r.line())));
      specs.push_back(std::move(s));
      subnets.push_back(read_gru(r));
    }
    model = std::make_unique<PiRnnModel>(std::move(rg), std::move(specs), std::move(subnets));
  } else {
    throw ParseError(r.line(), "unknown model kind '" + kind + "'");
  }
  r.next("end", 0);
  return model;
}

void save_model(const SequenceModel& m, const std::filesystem::path& path, const std::string& fingerprint) {
  text::write_file(path, format_model(m, fingerprint));
}

std::unique_ptr<SequenceModel> load_model(const std::filesystem::path& path, const NetworkGraph* topology) {
  if (!std::filesystem::exists(path)) throw std::runtime_error("model file not found: '" + path.string() + "'");
  return parse_model(text::read_file(path), topology);
}

}  // namespace dhs
