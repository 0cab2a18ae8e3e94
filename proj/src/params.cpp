#include "pasrec/params.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace pasrec {

using nlohmann::json;

Tensor& ParameterStore::add(std::string name, std::string group, Matrix value) {
  if (index_.contains(name)) throw std::invalid_argument("duplicate parameter " + name);
  index_.emplace(name, tensors_.size());
  tensors_.push_back(Tensor{std::move(name), std::move(group), std::move(value)});
  return tensors_.back();
}

size_t ParameterStore::index_of(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter " + name);
  return it->second;
}

size_t ParameterStore::scalar_count() const {
  size_t n = 0;
  for (const auto& t : tensors_) n += static_cast<size_t>(t.value.size());
  return n;
}

std::vector<std::string> ParameterStore::groups() const {
  std::vector<std::string> out;
  for (const auto& t : tensors_) {
    if (std::find(out.begin(), out.end(), t.group) == out.end()) out.push_back(t.group);
  }
  return out;
}

bool ParameterStore::all_finite() const {
  return std::all_of(tensors_.begin(), tensors_.end(), [](const Tensor& t) { return t.value.allFinite(); });
}

bool ParameterStore::same_shapes(const ParameterStore& other) const {
  if (other.size() != size()) return false;
  for (size_t i = 0; i < size(); ++i) {
    const auto& a = tensors_[i];
    const auto& b = other.tensors_[i];
    if (a.name != b.name || a.value.rows() != b.value.rows() || a.value.cols() != b.value.cols()) return false;
  }
  return true;
}

Binding::Binding(const ParameterStore& store, ad::Tape& tape, bool trainable)
    : store_(&store), tape_(&tape), trainable_(trainable), vars_(store.size()) {
  if (trainable_) {
    for (size_t i = 0; i < store.size(); ++i) vars_[i] = tape.leaf(store.tensors()[i].value);
  }
}

ad::Var Binding::operator[](const std::string& name) const {
  const size_t i = store_->index_of(name);
  if (!vars_[i].valid()) vars_[i] = tape_->constant(store_->tensors()[i].value);
  return vars_[i];
}

ad::Var Binding::gather(const std::string& name, std::span<const int> rows) const {
  if (trainable_) return ad::gather_rows((*this)[name], rows);
  const Matrix& table = store_->value(name);
  Matrix out(static_cast<Eigen::Index>(rows.size()), table.cols());
  for (size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] < 0 || rows[r] >= table.rows()) throw std::out_of_range("row index out of range in " + name);
    out.row(static_cast<Eigen::Index>(r)) = table.row(rows[r]);
  }
  return tape_->constant(std::move(out));
}

Matrix Initializer::uniform(Eigen::Index rows, Eigen::Index cols, double bound) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng_);
  return m;
}

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error("checkpoint truncated");
  return v;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  json header;
  header["meta"] = ckpt.meta;
  json index = json::array();
  for (const auto& t : ckpt.params.tensors()) {
    index.push_back({{"name", t.name}, {"group", t.group}, {"rows", t.value.rows()}, {"cols", t.value.cols()}});
  }
  header["tensors"] = std::move(index);
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out.write(Checkpoint::kMagic, sizeof(Checkpoint::kMagic));
  write_pod(out, Checkpoint::kVersion);
  write_pod(out, static_cast<std::uint64_t>(text.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& t : ckpt.params.tensors()) {
    out.write(reinterpret_cast<const char*>(t.value.data()),
              static_cast<std::streamsize>(sizeof(double) * static_cast<size_t>(t.value.size())));
  }
  if (!out) throw std::runtime_error("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read checkpoint " + path.string());
  char magic[sizeof(Checkpoint::kMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, Checkpoint::kMagic, sizeof(magic)) != 0) {
    throw std::runtime_error(path.string() + " is not a checkpoint");
  }
  const auto version = read_pod<std::uint32_t>(in);
  if (version != Checkpoint::kVersion) {
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  }
  const auto len = read_pod<std::uint64_t>(in);
  if (len > (1ULL << 30)) throw std::runtime_error("checkpoint header too large");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw std::runtime_error("checkpoint truncated");
  const json header = json::parse(text);

  Checkpoint ckpt;
  ckpt.meta = header.at("meta");
  for (const auto& t : header.at("tensors")) {
    Matrix m(t.at("rows").get<Eigen::Index>(), t.at("cols").get<Eigen::Index>());
    in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(sizeof(double) * static_cast<size_t>(m.size())));
    if (!in) throw std::runtime_error("checkpoint truncated in tensor " + t.at("name").get<std::string>());
    ckpt.params.add(t.at("name").get<std::string>(), t.at("group").get<std::string>(), std::move(m));
  }
  return ckpt;
}

}  // namespace pasrec
