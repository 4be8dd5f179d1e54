#include "angdiff/io.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace angdiff {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

const Vec& Checkpoint::tensor(const std::string& name) const {
  for (const auto& [n, v] : tensors) {
    if (n == name) return v;
  }
  throw std::invalid_argument("checkpoint: missing tensor '" + name + "'");
}

void write_checkpoint(const std::string& path, const Checkpoint& ck) {
  nlohmann::json header = ck.header;
  header["format"] = "angdiff-checkpoint";
  header["dtype"] = "float32-le";
  header["tensors"] = nlohmann::json::array();
  for (const auto& [name, v] : ck.tensors) header["tensors"].push_back({{"name", name}, {"count", v.size()}});

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path);
  out << header.dump() << '\n';
  for (const auto& [name, v] : ck.tensors) {
    std::vector<float> buf(v.begin(), v.end());
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
  }
  if (!out) throw std::runtime_error("short write on checkpoint " + path);
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path);
  std::string line;
  std::getline(in, line);
  Checkpoint ck;
  ck.header = nlohmann::json::parse(line);
  if (ck.header.value("format", "") != "angdiff-checkpoint") {
    throw std::runtime_error(path + " is not an angdiff checkpoint");
  }
  for (const auto& t : ck.header.at("tensors")) {
    const auto count = t.at("count").get<std::size_t>();
    std::vector<float> buf(count);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(count * sizeof(float)));
    if (!in) throw std::runtime_error("truncated checkpoint " + path);
    ck.tensors.emplace_back(t.at("name").get<std::string>(), Vec(buf.begin(), buf.end()));
  }
  return ck;
}

Checkpoint head_checkpoint(const HeadParams& hp, long step, const nlohmann::json& extra) {
  Checkpoint ck;
  ck.header = {{"kind", "head"}, {"step", step}, {"head", hp.config().to_json()}};
  if (!extra.is_null()) ck.header["extra"] = extra;
  ck.tensors.emplace_back("head", hp.data());
  return ck;
}

HeadParams head_from_checkpoint(const Checkpoint& ck) {
  require(ck.header.value("kind", "") == "head", "checkpoint does not hold a head");
  HeadParams hp(HeadConfig::from_json(ck.header.at("head")));
  const Vec& v = ck.tensor("head");
  require(v.size() == hp.data().size(), "head checkpoint: parameter count mismatch");
  hp.data() = v;
  return hp;
}

Checkpoint argen_checkpoint(const ArgenModel& m, long step, const nlohmann::json& extra,
                            const ArgenModel* ema) {
  Checkpoint ck;
  ck.header = {{"kind", "argen"},
               {"step", step},
               {"head", m.head.config().to_json()},
               {"conditioner", m.conditioner.config().to_json()}};
  if (!extra.is_null()) ck.header["extra"] = extra;
  ck.tensors.emplace_back("conditioner", m.conditioner.data());
  ck.tensors.emplace_back("head", m.head.data());
  if (ema) {
    ck.tensors.emplace_back("ema_conditioner", ema->conditioner.data());
    ck.tensors.emplace_back("ema_head", ema->head.data());
  }
  return ck;
}

bool checkpoint_has_ema(const Checkpoint& ck) {
  for (const auto& [name, v] : ck.tensors) {
    if (name == "ema_head") return true;
  }
  return false;
}

ArgenModel argen_from_checkpoint(const Checkpoint& ck, bool ema) {
  require(ck.header.value("kind", "") == "argen", "checkpoint does not hold an argen model");
  ArgenModel m{ConditionerParams(ConditionerConfig::from_json(ck.header.at("conditioner"))),
               HeadParams(HeadConfig::from_json(ck.header.at("head")))};
  const Vec& c = ck.tensor(ema ? "ema_conditioner" : "conditioner");
  const Vec& h = ck.tensor(ema ? "ema_head" : "head");
  require(c.size() == m.conditioner.data().size() && h.size() == m.head.data().size(),
          "argen checkpoint: parameter count mismatch");
  m.conditioner.data() = c;
  m.head.data() = h;
  return m;
}

void write_loss_curve_csv(std::ostream& os, const std::vector<LossCurveRow>& rows) {
  os << "step,t_bucket,mse\n";
  for (const auto& r : rows) os << r.step << ',' << r.t_bucket << ',' << format_double(r.mse) << '\n';
}

void write_ratio_curve_csv(std::ostream& os, const std::vector<RatioCurveRow>& rows) {
  os << "step,ratio_bucket,mse\n";
  for (const auto& r : rows) os << r.step << ',' << r.ratio_bucket << ',' << format_double(r.mse) << '\n';
}

void write_grids_csv(std::ostream& os, const std::vector<TokenGrid>& grids) {
  os << "grid_id,position,component,value\n";
  for (std::size_t g = 0; g < grids.size(); ++g) {
    const auto& grid = grids[g];
    const auto idx = grid.index_of_position();
    for (int p = 0; p < grid.n; ++p) {
      for (int c = 0; c < grid.d; ++c) {
        os << g << ',' << p << ',' << c << ','
           << format_double(grid.values(c, idx[static_cast<std::size_t>(p)])) << '\n';
      }
    }
  }
}

nlohmann::json grid_manifest(const std::vector<TokenGrid>& grids, std::uint64_t seed,
                             const std::string& config_hash) {
  nlohmann::json labels = nlohmann::json::array();
  for (const auto& g : grids) labels.push_back(g.label);
  return {{"n", grids.empty() ? 0 : grids.front().n},
          {"d", grids.empty() ? 0 : grids.front().d},
          {"count", grids.size()},
          {"label", labels},
          {"seed", seed},
          {"config_hash", config_hash}};
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

}  // namespace angdiff
