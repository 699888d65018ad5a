#include "murel/params.hpp"

#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "murel/errors.hpp"

namespace murel {

using ordered_json = nlohmann::ordered_json;

Tensor glorot(std::size_t rows, std::size_t cols, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::vector<double> v(rows * cols);
  for (auto& x : v) x = rng.uniform(-limit, limit);
  return Tensor({rows, cols}, std::move(v), true);
}

Tensor uniform_param(Shape shape, double scale, Rng& rng) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(-scale, scale);
  return Tensor(std::move(shape), std::move(v), true);
}

void ParamStore::add(std::string name, Tensor tensor) {
  if (contains(name)) throw ContractError("duplicate parameter name '" + name + "'");
  tensor.set_requires_grad(true);
  tensor.set_label(name);
  entries_.emplace_back(std::move(name), std::move(tensor));
}

bool ParamStore::contains(const std::string& name) const {
  for (const auto& [n, t] : entries_)
    if (n == name) return true;
  return false;
}

const Tensor& ParamStore::get(const std::string& name) const {
  for (const auto& [n, t] : entries_)
    if (n == name) return t;
  throw IndexError("unknown parameter '" + name + "'");
}

Tensor& ParamStore::get(const std::string& name) {
  for (auto& [n, t] : entries_)
    if (n == name) return t;
  throw IndexError("unknown parameter '" + name + "'");
}

std::size_t ParamStore::parameter_count() const { return parameter_count(""); }

std::size_t ParamStore::parameter_count(const std::string& prefix) const {
  std::size_t n = 0;
  for (const auto& [name, t] : entries_)
    if (name.starts_with(prefix)) n += t.size();
  return n;
}

std::vector<Tensor> ParamStore::tensors() const {
  std::vector<Tensor> out;
  out.reserve(entries_.size());
  for (const auto& [n, t] : entries_) out.push_back(t);
  return out;
}

void ParamStore::zero_grad() {
  for (auto& [n, t] : entries_) t.zero_grad();
}

void ParamStore::fill(double value) {
  for (auto& [n, t] : entries_)
    for (auto& x : t.mutable_data()) x = value;
}

std::string checkpoint_to_string(const ParamStore& store) {
  ordered_json doc = ordered_json::object();
  for (const auto& [name, t] : store.entries()) {
    ordered_json entry;
    entry["shape"] = t.shape();
    entry["data"] = std::vector<double>(t.data().begin(), t.data().end());
    doc[name] = std::move(entry);
  }
  return doc.dump() + "\n";
}

void checkpoint_from_string(const std::string& text, ParamStore& store) {
  ordered_json doc;
  try {
    doc = ordered_json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw DataError("checkpoint root must be an object");
  for (const auto& [name, value] : doc.items()) {
    if (!store.contains(name)) throw DataError("checkpoint has unexpected parameter '" + name + "'");
  }
  for (auto [name, tensor] : store.entries()) {
    if (!doc.contains(name)) throw DataError("checkpoint is missing parameter '" + name + "'");
    const auto& entry = doc[name];
    Shape shape;
    std::vector<double> data;
    try {
      shape = entry.at("shape").get<Shape>();
      data = entry.at("data").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
      throw DataError("checkpoint entry '" + name + "' is malformed: " + e.what());
    }
    if (shape != tensor.shape()) {
      throw DataError("checkpoint parameter '" + name + "' has shape " + shape_str(shape) + ", config expects " +
                      shape_str(tensor.shape()));
    }
    if (data.size() != tensor.size()) throw DataError("checkpoint parameter '" + name + "' has wrong element count");
    std::copy(data.begin(), data.end(), tensor.mutable_data().begin());
  }
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FileError("cannot open '" + tmp.string() + "' for writing");
    out << contents;
    if (!out) throw FileError("write failed for '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw FileError("cannot rename '" + tmp.string() + "' to '" + path.string() + "': " + ec.message());
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void save_checkpoint(const ParamStore& store, const std::filesystem::path& path) {
  write_file_atomic(path, checkpoint_to_string(store));
}

void load_checkpoint(const std::filesystem::path& path, ParamStore& store) {
  checkpoint_from_string(read_file(path), store);
}

}  // namespace murel
