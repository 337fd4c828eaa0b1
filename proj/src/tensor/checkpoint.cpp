#include "cat/tensor/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "cat/common/error.hpp"

namespace cat::tensor {

static_assert(std::endian::native == std::endian::little,
              "checkpoint IO assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'C', 'A', 'T', 'C', 'K', 'P', 'T', '1'};

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path) : out_(path, std::ios::binary) {
    if (!out_) throw Error(ErrorKind::Io, "cannot open " + path.string() + " for writing");
  }
  template <class T>
  void pod(T v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof v);
  }
  void bytes(const std::string& s) { out_.write(s.data(), static_cast<std::streamsize>(s.size())); }
  void doubles(const std::vector<double>& v) {
    pod<std::uint64_t>(v.size());
    out_.write(reinterpret_cast<const char*>(v.data()),
               static_cast<std::streamsize>(v.size() * sizeof(double)));
  }
  void finish(const std::filesystem::path& path) {
    out_.flush();
    if (!out_) throw Error(ErrorKind::Io, "write failed for " + path.string());
  }

 private:
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : path_(path.string()) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::Io, "cannot open checkpoint " + path_);
    buf_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  void raw(void* dst, std::size_t n) {
    if (pos_ + n > buf_.size()) {
      throw Error(ErrorKind::TruncatedFile, "checkpoint " + path_ + " ends at byte " +
                                                std::to_string(buf_.size()));
    }
    std::memcpy(dst, buf_.data() + pos_, n);
    pos_ += n;
  }
  template <class T>
  T pod() {
    T v;
    raw(&v, sizeof v);
    return v;
  }
  std::string bytes(std::size_t n) {
    std::string s(n, '\0');
    raw(s.data(), n);
    return s;
  }
  std::vector<double> doubles(std::size_t n) {
    if (n > (buf_.size() - pos_) / sizeof(double)) raw(nullptr, buf_.size() + 1);
    std::vector<double> v(n);
    raw(v.data(), n * sizeof(double));
    return v;
  }
  std::vector<double> sized_doubles() { return doubles(pod<std::uint64_t>()); }
  const std::string& path() const { return path_; }

 private:
  std::string path_;
  std::vector<char> buf_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const std::string& config_text,
                     const ParameterList& params, const OptimizerState* optimizer) {
  Writer w(path);
  w.bytes(std::string(kMagic, sizeof kMagic));
  w.pod<std::uint32_t>(kCheckpointVersion);
  w.pod<std::uint64_t>(config_text.size());
  w.bytes(config_text);
  w.pod<std::uint64_t>(params.size());
  for (const auto& p : params) {
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(p.name.size()));
    w.bytes(p.name);
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(p.tensor.rank()));
    for (std::size_t e : p.tensor.shape()) w.pod<std::uint64_t>(e);
    const auto d = p.tensor.data();
    w.doubles(std::vector<double>(d.begin(), d.end()));
  }
  w.pod<std::uint8_t>(optimizer ? 1 : 0);
  if (optimizer) {
    w.pod(optimizer->lr);
    w.pod(optimizer->beta1);
    w.pod(optimizer->beta2);
    w.pod(optimizer->eps);
    w.pod(optimizer->weight_decay);
    w.pod<std::uint64_t>(optimizer->step);
    w.pod<std::uint64_t>(optimizer->m.size());
    for (const auto& m : optimizer->m) w.doubles(m);
    for (const auto& v : optimizer->v) w.doubles(v);
  }
  w.finish(path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  Reader r(path);
  Checkpoint c;
  if (r.bytes(sizeof kMagic) != std::string(kMagic, sizeof kMagic)) {
    throw Error(ErrorKind::CheckpointMismatch, r.path() + " is not a checkpoint file");
  }
  c.version = r.pod<std::uint32_t>();
  if (c.version != kCheckpointVersion) {
    throw Error(ErrorKind::CheckpointMismatch,
                "unsupported checkpoint version " + std::to_string(c.version));
  }
  c.config_text = r.bytes(r.pod<std::uint64_t>());
  const auto count = r.pod<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    StoredArray a;
    a.name = r.bytes(r.pod<std::uint32_t>());
    const auto rank = r.pod<std::uint32_t>();
    for (std::uint32_t k = 0; k < rank; ++k) a.shape.push_back(r.pod<std::uint64_t>());
    a.values = r.sized_doubles();
    if (a.values.size() != shape_numel(a.shape)) {
      throw Error(ErrorKind::CheckpointMismatch, "parameter " + a.name + " stores " +
                                                     std::to_string(a.values.size()) +
                                                     " values for shape " + shape_str(a.shape));
    }
    c.params.push_back(std::move(a));
  }
  if (r.pod<std::uint8_t>() != 0) {
    OptimizerState s;
    s.lr = r.pod<double>();
    s.beta1 = r.pod<double>();
    s.beta2 = r.pod<double>();
    s.eps = r.pod<double>();
    s.weight_decay = r.pod<double>();
    s.step = r.pod<std::uint64_t>();
    const auto n = r.pod<std::uint64_t>();
    for (std::uint64_t i = 0; i < n; ++i) s.m.push_back(r.sized_doubles());
    for (std::uint64_t i = 0; i < n; ++i) s.v.push_back(r.sized_doubles());
    c.optimizer = std::move(s);
  }
  return c;
}

void load_parameters(const Checkpoint& ckpt, ParameterList& params) {
  std::map<std::string, const StoredArray*> stored;
  for (const auto& a : ckpt.params) stored[a.name] = &a;
  if (stored.size() != params.size()) {
    throw Error(ErrorKind::CheckpointMismatch, "checkpoint holds " + std::to_string(stored.size()) +
                                                   " parameters, model expects " +
                                                   std::to_string(params.size()));
  }
  for (auto& p : params) {
    auto it = stored.find(p.name);
    if (it == stored.end()) {
      throw Error(ErrorKind::CheckpointMismatch, "checkpoint lacks parameter " + p.name);
    }
    if (it->second->shape != p.tensor.shape()) {
      throw Error(ErrorKind::CheckpointMismatch, "parameter " + p.name + " has shape " +
                                                     shape_str(it->second->shape) + ", model expects " +
                                                     shape_str(p.tensor.shape()));
    }
  }
  for (auto& p : params) {
    const auto& vals = stored.at(p.name)->values;
    std::copy(vals.begin(), vals.end(), p.tensor.mutable_data().begin());
  }
}

}  // namespace cat::tensor
