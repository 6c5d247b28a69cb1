#include "dhs/dataset.hpp"

#include <cmath>
#include <random>

#include "dhs/text_format.hpp"

namespace dhs {

Eigen::MatrixXd generate_mprbs(const std::vector<ExcitationChannel>& channels, std::size_t n_samples,
                               std::uint64_t seed) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(n_samples), static_cast<Eigen::Index>(channels.size()));
  for (std::size_t c = 0; c < channels.size(); ++c) {
    const auto& ch = channels[c];
    if (!(ch.hi > ch.lo)) throw std::invalid_argument("excitation range must be non-degenerate");
    if (ch.hold_min < 1 || ch.hold_max < ch.hold_min) {
      throw std::invalid_argument("excitation hold bounds must satisfy 1 <= min <= max");
    }
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(c)};
    std::mt19937_64 rng(seq);
    std::uniform_real_distribution<double> level(ch.lo, ch.hi);
    std::uniform_int_distribution<int> hold(ch.hold_min, ch.hold_max);
    std::size_t k = 0;
    while (k < n_samples) {
      const double v = level(rng);
      const auto len = static_cast<std::size_t>(hold(rng));
      for (std::size_t j = 0; j < len && k < n_samples; ++j, ++k) {
        out(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(c)) = v;
      }
    }
  }
  return out;
}

Eigen::MatrixXd Dataset::model_inputs() const { return model_inputs(Split{0, rows()}); }

Eigen::MatrixXd Dataset::model_inputs(Split s) const {
  const auto n = static_cast<Eigen::Index>(s.size());
  const auto b = static_cast<Eigen::Index>(s.begin);
  Eigen::MatrixXd u(n, inputs.cols() + disturbances.cols());
  u << inputs.middleRows(b, n), disturbances.middleRows(b, n);
  return u;
}

Eigen::MatrixXd Dataset::outputs_of(Split s) const {
  return outputs.middleRows(static_cast<Eigen::Index>(s.begin), static_cast<Eigen::Index>(s.size()));
}

void Dataset::set_split(const SplitFractions& f) {
  if (!(f.train > 0.0) || !(f.val > 0.0) || f.train + f.val >= 1.0) {
    throw std::invalid_argument("split fractions must leave room for a test set");
  }
  const double n = static_cast<double>(rows());
  n_train = static_cast<std::size_t>(std::llround(n * f.train));
  n_val = static_cast<std::size_t>(std::llround(n * f.val));
  if (n_train + n_val >= rows()) throw std::invalid_argument("dataset too small to split");
}

Dataset Dataset::head(std::size_t n, const SplitFractions& fractions) const {
  if (n > rows()) throw std::invalid_argument("head larger than dataset");
  Dataset d = *this;
  const auto k = static_cast<Eigen::Index>(n);
  d.inputs = inputs.topRows(k);
  d.disturbances = disturbances.topRows(k);
  d.outputs = outputs.topRows(k);
  d.set_split(fractions);
  return d;
}

Dataset Dataset::shrink_training(std::size_t n) const {
  if (n == 0 || n > n_train) throw std::invalid_argument("training rows out of range");
  Dataset d = *this;
  const auto drop = static_cast<Eigen::Index>(n_train - n);
  const auto k = static_cast<Eigen::Index>(rows()) - drop;
  d.inputs = inputs.bottomRows(k);
  d.disturbances = disturbances.bottomRows(k);
  d.outputs = outputs.bottomRows(k);
  d.n_train = n;
  return d;
}

Dataset run_dataset(const PlantLayout& layout, const Eigen::MatrixXd& supply,
                    const Eigen::MatrixXd& demands, const DatasetOptions& options) {
  const auto nc = static_cast<Eigen::Index>(layout.load_count());
  if (supply.cols() != 1) throw std::invalid_argument("supply sequence must have one column");
  if (demands.cols() != nc) throw std::invalid_argument("demand sequence must have one column per load");
  if (supply.rows() != demands.rows()) throw std::invalid_argument("sequence lengths differ");

  std::vector<double> nominal = options.nominal_demands;
  if (nominal.empty()) {
    for (Eigen::Index j = 0; j < nc; ++j) nominal.push_back(demands.col(j).mean());
  }
  Simulator sim(layout);
  sim.warm_start(options.nominal_supply, nominal, options.warm_start_hours);

  Dataset d;
  d.tau_s = layout.config().tau_s;
  d.input_names = {"T0s"};
  d.disturbance_names = layout.disturbance_names();
  d.output_names = layout.output_names();
  d.inputs = supply;
  d.disturbances = demands;
  d.outputs.resize(supply.rows(), static_cast<Eigen::Index>(layout.output_size()));
  std::vector<double> P(static_cast<std::size_t>(nc));
  for (Eigen::Index k = 0; k < supply.rows(); ++k) {
    for (Eigen::Index j = 0; j < nc; ++j) P[static_cast<std::size_t>(j)] = demands(k, j);
    d.outputs.row(k) = sim.step(supply(k, 0), P).transpose();
  }
  d.fingerprint = options.fingerprint;
  d.set_split(options.split);
  return d;
}

std::string format_dataset_csv(const Dataset& d) {
  using text::format_double;
  std::string out = "# dhs-dataset v1\n";
  out += "# config_fingerprint=" + d.fingerprint + "\n";
  out += "# tau_s=" + format_double(d.tau_s) + "\n";
  out += "# split=" + std::to_string(d.n_train) + "," + std::to_string(d.n_val) + "," +
         std::to_string(d.rows() - d.n_train - d.n_val) + "\n";
  out += "# inputs=" + std::to_string(d.input_names.size()) +
         " disturbances=" + std::to_string(d.disturbance_names.size()) + "\n";
  out += "t";
  for (const auto* names : {&d.input_names, &d.disturbance_names, &d.output_names}) {
    for (const auto& n : *names) out += "," + n;
  }
  out += "\n";
  for (Eigen::Index k = 0; k < d.outputs.rows(); ++k) {
    out += format_double(static_cast<double>(k) * d.tau_s);
    for (const auto* m : {&d.inputs, &d.disturbances, &d.outputs}) {
      for (Eigen::Index j = 0; j < m->cols(); ++j) out += "," + format_double((*m)(k, j));
    }
    out += "\n";
  }
  return out;
}

Dataset parse_dataset_csv(const std::string& content) {
  Dataset d;
  std::size_t n_in = 0, n_dist = 0;
  bool have_counts = false, have_split = false;
  std::size_t split[3] = {0, 0, 0};
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
  int number = 0;
  std::size_t pos = 0;
  while (pos < content.size()) {
    std::size_t end = content.find('\n', pos);
    if (end == std::string::npos) end = content.size();
    std::string line = text::trim(std::string_view(content).substr(pos, end - pos));
    pos = end + 1;
    ++number;
    if (line.empty()) continue;
    if (line.front() == '#') {
      auto body = text::trim(std::string_view(line).substr(1));
      auto eq = body.find('=');
      if (body.rfind("config_fingerprint=", 0) == 0) {
        d.fingerprint = body.substr(eq + 1);
      } else if (body.rfind("tau_s=", 0) == 0) {
        d.tau_s = text::parse_double(body.substr(eq + 1), number);
      } else if (body.rfind("split=", 0) == 0) {
        auto parts = text::split(body.substr(eq + 1), ',');
        if (parts.size() != 3) throw ParseError(number, "split needs three counts");
        for (int i = 0; i < 3; ++i) split[i] = static_cast<std::size_t>(text::parse_int(parts[static_cast<std::size_t>(i)], number));
        have_split = true;
      } else if (body.rfind("inputs=", 0) == 0) {
        auto tok = text::split_ws(body);
        if (tok.size() != 2 || tok[1].rfind("disturbances=", 0) != 0) {
          throw ParseError(number, "expected 'inputs=N disturbances=M'");
        }
        n_in = static_cast<std::size_t>(text::parse_int(tok[0].substr(7), number));
        n_dist = static_cast<std::size_t>(text::parse_int(tok[1].substr(13), number));
        have_counts = true;
      }
      continue;
    }
    if (header.empty()) {
      header = text::split(line, ',');
      if (header.empty() || header[0] != "t") throw ParseError(number, "header must start with 't'");
      continue;
    }
    auto cells = text::split(line, ',');
    if (cells.size() != header.size()) throw ParseError(number, "column count differs from header");
    std::vector<double> row;
    row.reserve(cells.size());
    for (const auto& c : cells) row.push_back(text::parse_double(c, number));
    rows.push_back(std::move(row));
  }
  if (header.empty()) throw ParseError(number, "missing header");
  if (!have_counts) throw ParseError(number, "missing 'inputs=' metadata");
  const std::size_t n_cols = header.size() - 1;
  if (n_in + n_dist >= n_cols) throw ParseError(number, "no output columns");
  const std::size_t n_out = n_cols - n_in - n_dist;
  d.input_names.assign(header.begin() + 1, header.begin() + 1 + static_cast<long>(n_in));
  d.disturbance_names.assign(header.begin() + 1 + static_cast<long>(n_in),
                             header.begin() + 1 + static_cast<long>(n_in + n_dist));
  d.output_names.assign(header.begin() + 1 + static_cast<long>(n_in + n_dist), header.end());
  const auto T = static_cast<Eigen::Index>(rows.size());
  d.inputs.resize(T, static_cast<Eigen::Index>(n_in));
  d.disturbances.resize(T, static_cast<Eigen::Index>(n_dist));
  d.outputs.resize(T, static_cast<Eigen::Index>(n_out));
  for (Eigen::Index k = 0; k < T; ++k) {
    const auto& r = rows[static_cast<std::size_t>(k)];
    for (std::size_t j = 0; j < n_in; ++j) d.inputs(k, static_cast<Eigen::Index>(j)) = r[1 + j];
    for (std::size_t j = 0; j < n_dist; ++j) d.disturbances(k, static_cast<Eigen::Index>(j)) = r[1 + n_in + j];
    for (std::size_t j = 0; j < n_out; ++j) d.outputs(k, static_cast<Eigen::Index>(j)) = r[1 + n_in + n_dist + j];
  }
  if (have_split) {
    if (split[0] + split[1] + split[2] != rows.size()) throw ParseError(number, "split counts do not sum to the row count");
    d.n_train = split[0];
    d.n_val = split[1];
  } else {
    d.set_split({});
  }
  return d;
}

void save_dataset(const Dataset& d, const std::filesystem::path& path) {
  text::write_file(path, format_dataset_csv(d));
}

Dataset load_dataset(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw std::runtime_error("dataset not found: '" + path.string() + "'");
  return parse_dataset_csv(text::read_file(path));
}

}  // namespace dhs
