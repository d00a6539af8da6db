#include "ctcloud/checkpoint.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "ctcloud/errors.hpp"

namespace ctcloud {

namespace {

std::string format_double(double v) {
  char buf[32];
  const int n = std::snprintf(buf, sizeof(buf), "%.17g", v);
  return std::string(buf, static_cast<std::size_t>(n));
}

void copy_into(Tensor dst, const Tensor& src, const std::string& name) {
  if (dst.shape() != src.shape()) {
    throw ConfigError("checkpoint entry '" + name + "' has shape " + shape_str(src.shape()) +
                      ", model expects " + shape_str(dst.shape()));
  }
  auto s = src.data();
  std::copy(s.begin(), s.end(), dst.mutable_data().begin());
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  out << kCheckpointMagic << '\n';
  for (const auto& [key, value] : ckpt.meta) out << "meta " << key << ' ' << value << '\n';
  for (const auto& [name, t] : ckpt.tensors) {
    out << "tensor " << name << ' ' << t.rank();
    for (std::size_t d : t.shape()) out << ' ' << d;
    out << '\n';
    bool first = true;
    for (double v : t.data()) {
      if (!first) out << ' ';
      out << format_double(v);
      first = false;
    }
    out << '\n';
  }
  if (!out) throw Error("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open checkpoint " + path.string());
  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(in, line) || line != kCheckpointMagic) {
    throw ParseError("missing " + std::string(kCheckpointMagic) + " header in " + path.string(), 1);
  }
  Checkpoint ckpt;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream is(line);
    std::string kind, name;
    is >> kind >> name;
    if (kind == "meta") {
      std::string value;
      std::getline(is >> std::ws, value);
      ckpt.meta[name] = value;
    } else if (kind == "tensor") {
      std::size_t rank = 0;
      if (!(is >> rank) || rank == 0) throw ParseError("bad tensor header for " + name, lineno);
      Shape shape(rank);
      for (auto& d : shape) {
        if (!(is >> d)) throw ParseError("bad tensor shape for " + name, lineno);
      }
      std::string values;
      if (!std::getline(in, values)) throw ParseError("missing values for " + name, lineno + 1);
      ++lineno;
      std::vector<double> data;
      data.reserve(shape_numel(shape));
      std::istringstream vs(values);
      std::string tok;
      while (vs >> tok) {
        try {
          data.push_back(std::stod(tok));
        } catch (const std::exception&) {
          throw ParseError("bad value '" + tok + "' for " + name, lineno);
        }
      }
      if (data.size() != shape_numel(shape)) {
        throw ParseError("value count mismatch for " + name, lineno);
      }
      ckpt.tensors.emplace(name, Tensor(std::move(shape), std::move(data)));
    } else {
      throw ParseError("unknown record '" + kind + "'", lineno);
    }
  }
  return ckpt;
}

void store_parameters(const ParameterSet& params, Checkpoint& ckpt) {
  for (const auto& [name, t] : params.parameters()) ckpt.tensors.insert_or_assign(name, t.detach());
  for (const auto& [name, t] : params.buffers()) ckpt.tensors.insert_or_assign(name, t.detach());
}

void restore_parameters(ParameterSet& params, const Checkpoint& ckpt) {
  auto restore = [&](const std::map<std::string, Tensor>& entries) {
    for (const auto& [name, t] : entries) {
      auto it = ckpt.tensors.find(name);
      if (it == ckpt.tensors.end()) throw ConfigError("checkpoint lacks entry '" + name + "'");
      copy_into(t, it->second, name);
    }
  };
  restore(params.parameters());
  restore(params.buffers());
}

}  // namespace ctcloud
