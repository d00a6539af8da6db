#include "ctcloud/data.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <numbers>
#include <set>
#include <sstream>

#include "ctcloud/errors.hpp"
#include "ctcloud/random.hpp"

namespace ctcloud {

namespace fs = std::filesystem;

std::size_t Dataset::num_parts() const {
  int top = -1;
  for (const auto& parts : category_parts) {
    for (int p : parts) top = std::max(top, p);
  }
  return static_cast<std::size_t>(top + 1);
}

void Dataset::validate() const {
  const std::size_t n = items.size();
  for (std::size_t i = 0; i < n; ++i) {
    const PointCloud& c = items[i];
    c.validate();
    if (!c.category || *c.category < 0 || static_cast<std::size_t>(*c.category) >= class_names.size()) {
      throw DataError("item " + std::to_string(i) + " has no valid class/category label");
    }
    if (task == Task::Segmentation) {
      if (category_parts.size() != class_names.size()) {
        throw DataError("segmentation dataset needs a part list per category");
      }
      if (c.point_labels.size() != c.size()) {
        throw DataError("item " + std::to_string(i) + " lacks per-point part labels");
      }
      const auto& allowed = category_parts[static_cast<std::size_t>(*c.category)];
      for (int l : c.point_labels) {
        if (std::find(allowed.begin(), allowed.end(), l) == allowed.end()) {
          throw DataError("item " + std::to_string(i) + " has part label " + std::to_string(l) +
                          " outside its category");
        }
      }
    }
  }
  std::set<std::size_t> seen;
  for (const auto* split : {&train, &test}) {
    for (std::size_t idx : *split) {
      if (idx >= n) throw DataError("split index " + std::to_string(idx) + " out of range");
      if (!seen.insert(idx).second) {
        throw DataError("item " + std::to_string(idx) + " appears twice across splits");
      }
    }
  }
}

Tensor sample_sphere(std::size_t n, Rng& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> xyz(3 * n);
  for (std::size_t i = 0; i < n; ++i) {
    double v[3], norm = 0.0;
    do {
      for (double& c : v) c = gauss(rng);
      norm = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    } while (norm < 1e-12);
    for (int d = 0; d < 3; ++d) xyz[3 * i + d] = v[d] / norm;
  }
  return Tensor({n, 3}, std::move(xyz));
}

Tensor sample_cube(std::size_t n, Rng& rng) {
  std::uniform_int_distribution<int> face(0, 5);
  std::uniform_real_distribution<double> coord(-0.5, 0.5);
  std::vector<double> xyz(3 * n);
  for (std::size_t i = 0; i < n; ++i) {
    const int f = face(rng);
    const int axis = f / 2;
    for (int d = 0; d < 3; ++d) xyz[3 * i + d] = d == axis ? (f % 2 ? 0.5 : -0.5) : coord(rng);
  }
  return Tensor({n, 3}, std::move(xyz));
}

Tensor sample_torus(std::size_t n, double major, double minor, Rng& rng) {
  // Area element is proportional to (R + r cos v); rejection keeps it uniform.
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> xyz(3 * n);
  for (std::size_t i = 0; i < n; ++i) {
    double u = 0.0, v = 0.0;
    do {
      u = angle(rng);
      v = angle(rng);
    } while (unit(rng) * (major + minor) > major + minor * std::cos(v));
    const double ring = major + minor * std::cos(v);
    xyz[3 * i + 0] = ring * std::cos(u);
    xyz[3 * i + 1] = ring * std::sin(u);
    xyz[3 * i + 2] = minor * std::sin(v);
  }
  return Tensor({n, 3}, std::move(xyz));
}

Tensor normalize_unit_sphere(const Tensor& coords, const double* center) {
  const std::size_t n = coords.dim(0);
  auto p = coords.data();
  double c[3] = {0.0, 0.0, 0.0};
  if (center) {
    std::copy_n(center, 3, c);
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      for (int d = 0; d < 3; ++d) c[d] += p[3 * i + d];
    }
    for (double& v : c) v /= static_cast<double>(n);
  }
  std::vector<double> out(p.begin(), p.end());
  double radius = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double r2 = 0.0;
    for (int d = 0; d < 3; ++d) {
      out[3 * i + d] -= c[d];
      r2 += out[3 * i + d] * out[3 * i + d];
    }
    radius = std::max(radius, std::sqrt(r2));
  }
  if (radius > 0.0) {
    for (double& v : out) v /= radius;
  }
  return Tensor(coords.shape(), std::move(out));
}

Dataset gen_shapes(std::size_t n_per_class, std::size_t n_points, std::uint64_t seed) {
  if (n_points < 8) throw ConfigError("gen_shapes: need at least 8 points per cloud");
  Dataset ds;
  ds.task = Task::Classification;
  ds.class_names = {"sphere", "cube", "torus"};
  for (std::size_t i = 0; i < 3 * n_per_class; ++i) {
    const int label = static_cast<int>(i % 3);
    Rng rng(derive_seed(seed, i));
    Tensor raw = label == 0   ? sample_sphere(n_points, rng)
                 : label == 1 ? sample_cube(n_points, rng)
                              : sample_torus(n_points, 1.0, 0.4, rng);
    PointCloud c;
    c.coords = normalize_unit_sphere(raw);
    c.category = label;
    ds.train.push_back(ds.items.size());
    ds.items.push_back(std::move(c));
  }
  return ds;
}

namespace {

// Cylinder of radius 0.5 and height 1 along z; labels 2/3/4 for bottom cap,
// barrel and top cap. Point counts follow surface area with every part kept.
void sample_cylinder(std::size_t n, Rng& rng, std::vector<double>& xyz, std::vector<int>& labels) {
  constexpr double radius = 0.5, height = 1.0;
  const double cap_area = std::numbers::pi * radius * radius;
  const double barrel_area = 2.0 * std::numbers::pi * radius * height;
  std::size_t caps = static_cast<std::size_t>(std::lround(n * cap_area / (2 * cap_area + barrel_area)));
  caps = std::clamp<std::size_t>(caps, 1, (n - 1) / 2);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<std::pair<std::array<double, 3>, int>> pts;
  for (std::size_t i = 0; i < n; ++i) {
    const double a = angle(rng);
    if (i < 2 * caps) {
      const double r = radius * std::sqrt(unit(rng));
      const bool top = i % 2 == 1;
      pts.push_back({{r * std::cos(a), r * std::sin(a), top ? height / 2 : -height / 2}, top ? 4 : 2});
    } else {
      const double z = (unit(rng) - 0.5) * height;
      pts.push_back({{radius * std::cos(a), radius * std::sin(a), z}, 3});
    }
  }
  std::shuffle(pts.begin(), pts.end(), rng);
  for (const auto& [p, l] : pts) {
    xyz.insert(xyz.end(), p.begin(), p.end());
    labels.push_back(l);
  }
}

}  // namespace

Dataset gen_part_shapes(std::size_t n_per_class, std::size_t n_points, std::uint64_t seed) {
  if (n_points < 8) throw ConfigError("gen_part_shapes: need at least 8 points per cloud");
  Dataset ds;
  ds.task = Task::Segmentation;
  ds.class_names = {"sphere", "cylinder"};
  ds.category_parts = {{0, 1}, {2, 3, 4}};
  const double origin[3] = {0.0, 0.0, 0.0};
  for (std::size_t i = 0; i < 2 * n_per_class; ++i) {
    const int category = static_cast<int>(i % 2);
    Rng rng(derive_seed(seed, i));
    PointCloud c;
    c.category = category;
    if (category == 0) {
      Tensor raw = sample_sphere(n_points, rng);
      for (std::size_t p = 0; p < n_points; ++p) c.point_labels.push_back(raw.data()[3 * p + 2] < 0.0 ? 0 : 1);
      c.coords = normalize_unit_sphere(raw, origin);
    } else {
      std::vector<double> xyz;
      sample_cylinder(n_points, rng, xyz, c.point_labels);
      c.coords = normalize_unit_sphere(Tensor({n_points, 3}, std::move(xyz)), origin);
    }
    ds.train.push_back(ds.items.size());
    ds.items.push_back(std::move(c));
  }
  return ds;
}

void assign_split(Dataset& ds, std::size_t n_train, std::size_t n_test, std::uint64_t seed) {
  if (n_train + n_test > ds.items.size()) {
    throw ConfigError("split of " + std::to_string(n_train) + " + " + std::to_string(n_test) +
                      " exceeds " + std::to_string(ds.items.size()) + " items");
  }
  std::vector<std::vector<std::size_t>> by_class(ds.class_names.size());
  for (std::size_t i = 0; i < ds.items.size(); ++i) {
    by_class.at(static_cast<std::size_t>(ds.items[i].category.value_or(0))).push_back(i);
  }
  Rng rng(derive_seed(seed, 0x5317));
  for (auto& group : by_class) std::shuffle(group.begin(), group.end(), rng);
  std::vector<std::size_t> order;
  for (std::size_t round = 0; order.size() < ds.items.size(); ++round) {
    for (const auto& group : by_class) {
      if (round < group.size()) order.push_back(group[round]);
    }
  }
  ds.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  ds.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
                 order.begin() + static_cast<std::ptrdiff_t>(n_train + n_test));
}

namespace {

std::string fmt17(double v) {
  char buf[32];
  const int n = std::snprintf(buf, sizeof(buf), "%.17g", v);
  return std::string(buf, static_cast<std::size_t>(n));
}

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    const std::size_t start = i;
    while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

}  // namespace

PointCloud load_xyz(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<double> xyz, feats;
  std::size_t columns = 0, lineno = 0;
  std::string line;
  while (std::getline(in, line)) {
    ++lineno;
    const auto tokens = split_ws(line);
    if (tokens.empty()) continue;
    if (columns == 0) {
      if (tokens.size() < 3) throw ParseError("expected at least x y z", lineno);
      columns = tokens.size();
    } else if (tokens.size() != columns) {
      throw ParseError("expected " + std::to_string(columns) + " values, got " +
                       std::to_string(tokens.size()), lineno);
    }
    for (std::size_t j = 0; j < tokens.size(); ++j) {
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(tokens[j].data(), tokens[j].data() + tokens[j].size(), v);
      if (ec != std::errc() || ptr != tokens[j].data() + tokens[j].size()) {
        throw ParseError("malformed number '" + std::string(tokens[j]) + "'", lineno);
      }
      if (!std::isfinite(v)) throw ParseError("non-finite value", lineno);
      (j < 3 ? xyz : feats).push_back(v);
    }
  }
  if (xyz.empty()) throw ParseError("no points in " + path.string(), lineno == 0 ? 1 : lineno);
  const std::size_t n = xyz.size() / 3;
  PointCloud cloud;
  cloud.coords = Tensor({n, 3}, std::move(xyz));
  if (columns > 3) cloud.features = Tensor({n, columns - 3}, std::move(feats));
  return cloud;
}

void save_xyz(const fs::path& path, const PointCloud& cloud) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  const std::size_t n = cloud.size();
  const std::size_t c = cloud.features.defined() ? cloud.features.dim(1) : 0;
  auto p = cloud.coords.data();
  for (std::size_t i = 0; i < n; ++i) {
    out << fmt17(p[3 * i]) << ' ' << fmt17(p[3 * i + 1]) << ' ' << fmt17(p[3 * i + 2]);
    for (std::size_t j = 0; j < c; ++j) out << ' ' << fmt17(cloud.features.data()[i * c + j]);
    out << '\n';
  }
}

std::vector<int> load_labels(const fs::path& path, std::size_t expected_count) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<int> labels;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto tokens = split_ws(line);
    if (tokens.empty()) continue;
    int v = 0;
    const auto [ptr, ec] = std::from_chars(tokens[0].data(), tokens[0].data() + tokens[0].size(), v);
    if (tokens.size() != 1 || ec != std::errc() || ptr != tokens[0].data() + tokens[0].size()) {
      throw ParseError("expected one integer label", lineno);
    }
    labels.push_back(v);
  }
  if (labels.empty()) throw ParseError("no labels in " + path.string(), lineno == 0 ? 1 : lineno);
  if (expected_count != 0 && labels.size() != expected_count) {
    throw DataError(path.string() + ": " + std::to_string(labels.size()) + " labels for " +
                    std::to_string(expected_count) + " points");
  }
  return labels;
}

void save_labels(const fs::path& path, std::span<const int> labels) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  for (int l : labels) out << l << '\n';
}

void save_dataset(const fs::path& dir, const Dataset& ds) {
  fs::create_directories(dir / "clouds");
  std::vector<std::string> split(ds.items.size(), "none");
  for (std::size_t i : ds.train) split.at(i) = "train";
  for (std::size_t i : ds.test) split.at(i) = "test";

  nlohmann::ordered_json manifest;
  manifest["format"] = "ctcloud-manifest-1";
  manifest["task"] = to_string(ds.task);
  manifest["class_names"] = ds.class_names;
  if (ds.task == Task::Segmentation) manifest["category_parts"] = ds.category_parts;
  manifest["items"] = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < ds.items.size(); ++i) {
    char stem[32];
    std::snprintf(stem, sizeof(stem), "clouds/%06zu", i);
    const std::string points = std::string(stem) + ".xyz";
    save_xyz(dir / points, ds.items[i]);
    nlohmann::ordered_json item;
    item["points"] = points;
    if (!ds.items[i].point_labels.empty()) {
      const std::string labels = std::string(stem) + ".labels";
      save_labels(dir / labels, ds.items[i].point_labels);
      item["labels"] = labels;
    }
    item["category"] = ds.items[i].category.value_or(-1);
    item["split"] = split[i];
    manifest["items"].push_back(item);
  }
  std::ofstream out(dir / "manifest.json");
  if (!out) throw DataError("cannot write manifest in " + dir.string());
  out << manifest.dump(2) << '\n';
}

Dataset load_manifest(const fs::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw DataError("cannot open manifest " + manifest_path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed manifest " + manifest_path.string() + ": " + e.what());
  }
  const fs::path root = manifest_path.parent_path();
  Dataset ds;
  try {
    ds.task = parse_task(j.at("task").get<std::string>());
    ds.class_names = j.at("class_names").get<std::vector<std::string>>();
    if (j.contains("category_parts")) {
      ds.category_parts = j.at("category_parts").get<std::vector<std::vector<int>>>();
    }
    for (const auto& item : j.at("items")) {
      PointCloud c = load_xyz(root / item.at("points").get<std::string>());
      if (item.contains("labels")) {
        c.point_labels = load_labels(root / item.at("labels").get<std::string>(), c.size());
      }
      c.category = item.at("category").get<int>();
      const std::string split = item.value("split", "train");
      if (split == "train") {
        ds.train.push_back(ds.items.size());
      } else if (split == "test") {
        ds.test.push_back(ds.items.size());
      } else if (split != "none") {
        throw DataError("unknown split '" + split + "'");
      }
      ds.items.push_back(std::move(c));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("invalid manifest " + manifest_path.string() + ": " + e.what());
  }
  ds.validate();
  return ds;
}

}  // namespace ctcloud
