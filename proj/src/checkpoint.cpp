#include "mdgr/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <vector>

#include "mdgr/error.hpp"

namespace mdgr {

static_assert(std::endian::native == std::endian::little,
              "checkpoint IO assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'M', 'D', 'G', 'R'};

class Writer {
 public:
  template <class U>
  void put(U value) {
    const auto* p = reinterpret_cast<const char*>(&value);
    bytes_.insert(bytes_.end(), p, p + sizeof(U));
  }
  void put_bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const char*>(data);
    bytes_.insert(bytes_.end(), p, p + n);
  }
  void put_string(const std::string& s) {
    put(static_cast<std::uint32_t>(s.size()));
    put_bytes(s.data(), s.size());
  }
  const std::vector<char>& bytes() const { return bytes_; }

 private:
  std::vector<char> bytes_;
};

class Reader {
 public:
  Reader(std::vector<char> bytes, std::string path) : bytes_(std::move(bytes)), path_(std::move(path)) {}

  template <class U>
  U get(const char* what) {
    U value;
    get_bytes(&value, sizeof(U), what);
    return value;
  }
  void get_bytes(void* out, std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      fail(ErrorKind::kFormat, "checkpoint " + path_ + " is truncated while reading " + what);
    }
    std::memcpy(out, bytes_.data() + pos_, n);
    pos_ += n;
  }
  std::string get_string(const char* what) {
    const auto n = get<std::uint32_t>(what);
    std::string s(n, '\0');
    get_bytes(s.data(), n, what);
    return s;
  }
  bool at_end() const { return pos_ == bytes_.size(); }
  const std::string& path() const { return path_; }

 private:
  std::vector<char> bytes_;
  std::size_t pos_ = 0;
  std::string path_;
};

void write_group(Writer& w, const ParameterSet<float>& group) {
  w.put(static_cast<std::uint32_t>(group.size()));
  for (std::size_t i = 0; i < group.size(); ++i) {
    w.put_string(group.name(i));
    const auto& t = group.at(i);
    w.put(static_cast<std::uint32_t>(t.rank()));
    for (int d : t.shape()) w.put(static_cast<std::uint32_t>(d));
    w.put_bytes(t.data(), t.size() * sizeof(float));
  }
}

ParameterSet<float> read_group(Reader& r) {
  ParameterSet<float> out;
  const auto count = r.get<std::uint32_t>("array count");
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.get_string("array name");
    const auto ndim = r.get<std::uint32_t>("array rank");
    require(ndim <= 8, ErrorKind::kFormat,
            "checkpoint " + r.path() + ": array '" + name + "' has implausible rank");
    Shape shape;
    std::size_t total = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      const auto dim = r.get<std::uint32_t>("array shape");
      shape.push_back(static_cast<int>(dim));
      total *= dim;
    }
    std::vector<float> values(total);
    r.get_bytes(values.data(), total * sizeof(float), "array payload");
    out.add(name, Tensor<float>(shape, std::move(values)));
  }
  return out;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  require(ckpt.params.same_layout(ckpt.optimizer.first_moment) &&
              ckpt.params.same_layout(ckpt.optimizer.second_moment),
          ErrorKind::kShapeMismatch, "save_checkpoint: optimizer moments do not match parameters");
  Writer w;
  w.put_bytes(kMagic, sizeof(kMagic));
  w.put(kCheckpointVersion);
  w.put_string(model_config_to_json(ckpt.config));
  w.put(static_cast<std::uint64_t>(ckpt.step));
  w.put(ckpt.optimizer.step);
  write_group(w, ckpt.params);
  write_group(w, ckpt.optimizer.first_moment);
  write_group(w, ckpt.optimizer.second_moment);

  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::kIo, "cannot write " + path);
  out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
  require(static_cast<bool>(out), ErrorKind::kIo, "write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::kIo, "cannot read " + path);
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader r(std::move(bytes), path);

  char magic[4];
  r.get_bytes(magic, sizeof(magic), "magic");
  require(std::memcmp(magic, kMagic, sizeof(kMagic)) == 0, ErrorKind::kFormat,
          "checkpoint " + path + " has bad magic bytes");
  const auto version = r.get<std::uint32_t>("version");
  require(version == kCheckpointVersion, ErrorKind::kFormat,
          "checkpoint " + path + " has version " + std::to_string(version) + ", expected " +
              std::to_string(kCheckpointVersion));

  Checkpoint ckpt;
  try {
    ckpt.config = model_config_from_json(r.get_string("model config"));
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::kFormat) throw;
    fail(ErrorKind::kFormat, "checkpoint " + path + ": bad model config: " + e.what());
  }
  ckpt.step = static_cast<std::int64_t>(r.get<std::uint64_t>("step"));
  ckpt.optimizer.step = r.get<std::uint64_t>("optimizer step");
  ckpt.params = read_group(r);
  ckpt.optimizer.first_moment = read_group(r);
  ckpt.optimizer.second_moment = read_group(r);
  require(r.at_end(), ErrorKind::kFormat, "checkpoint " + path + " has trailing bytes");
  require(ckpt.params.same_layout(ckpt.optimizer.first_moment) &&
              ckpt.params.same_layout(ckpt.optimizer.second_moment),
          ErrorKind::kFormat, "checkpoint " + path + ": optimizer moments do not match parameters");
  return ckpt;
}

}  // namespace mdgr
