#include "gtseg/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "gtseg/image_io.hpp"

namespace gtseg {

namespace {

constexpr char kMagic[8] = {'G', 'T', 'S', 'E', 'G', 'A', 'R', 'C'};

template <typename T> T byteswap_if_big(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i)
      std::swap(b[i], b[sizeof(T) - 1 - i]);
    std::memcpy(&v, b, sizeof(T));
  }
  return v;
}

template <typename T> void put(std::ostream &out, T v) {
  v = byteswap_if_big(v);
  out.write(reinterpret_cast<const char *>(&v), sizeof(T));
}

class Reader {
public:
  Reader(std::istream &in, std::filesystem::path path) : in_(in), path_(std::move(path)) {}

  template <typename T> T get() {
    T v;
    bytes(&v, sizeof(T));
    return byteswap_if_big(v);
  }
  void bytes(void *dst, std::size_t n) {
    in_.read(static_cast<char *>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n)
      throw IoError("truncated checkpoint " + path_.string());
  }
  [[noreturn]] void corrupt(const std::string &why) const {
    throw IoError("corrupt checkpoint " + path_.string() + ": " + why);
  }

private:
  std::istream &in_;
  std::filesystem::path path_;
};

} // namespace

void Archive::put_tensor(const std::string &name, const Tensor &t) {
  ArchiveEntry e;
  e.dtype = DType::f64;
  e.shape = t.shape();
  e.payload.resize(t.numel() * sizeof(double));
  for (std::size_t i = 0; i < t.numel(); ++i) {
    const double v = byteswap_if_big(t[i]);
    std::memcpy(e.payload.data() + i * sizeof(double), &v, sizeof(double));
  }
  entries_[name] = std::move(e);
}

void Archive::put_text(const std::string &name, const std::string &text) {
  ArchiveEntry e;
  e.dtype = DType::u8;
  e.shape = {static_cast<int>(text.size())};
  e.payload.assign(text.begin(), text.end());
  entries_[name] = std::move(e);
}

void Archive::put_params(const std::string &prefix, const ParamList &params) {
  for (const auto &p : params)
    put_tensor(prefix + p.name, p.var.value());
}

Tensor Archive::get_tensor(const std::string &name) const {
  auto it = entries_.find(name);
  if (it == entries_.end())
    throw std::out_of_range("archive has no entry " + name);
  const ArchiveEntry &e = it->second;
  if (e.dtype != DType::f64)
    throw std::invalid_argument("archive entry " + name + " is not f64");
  Tensor t(e.shape);
  if (e.payload.size() != t.numel() * sizeof(double))
    throw std::invalid_argument("archive entry " + name + " payload does not match its shape");
  for (std::size_t i = 0; i < t.numel(); ++i) {
    double v;
    std::memcpy(&v, e.payload.data() + i * sizeof(double), sizeof(double));
    t[i] = byteswap_if_big(v);
  }
  return t;
}

std::string Archive::get_text(const std::string &name) const {
  auto it = entries_.find(name);
  if (it == entries_.end())
    throw std::out_of_range("archive has no entry " + name);
  if (it->second.dtype != DType::u8)
    throw std::invalid_argument("archive entry " + name + " is not text");
  return std::string(it->second.payload.begin(), it->second.payload.end());
}

void Archive::get_params(const std::string &prefix, const ParamList &params) const {
  for (const auto &p : params) {
    Tensor t = get_tensor(prefix + p.name);
    if (!t.same_shape(p.var.value()))
      throw std::invalid_argument("archive entry " + prefix + p.name + " has shape " + shape_str(t.shape()) +
                                  ", expected " + shape_str(p.var.value().shape()));
    ag::Var dst = p.var;
    dst.mutable_value() = std::move(t);
  }
}

bool Archive::has_prefix(const std::string &prefix) const { return count_prefix(prefix) > 0; }

std::size_t Archive::count_prefix(const std::string &prefix) const {
  std::size_t n = 0;
  for (auto it = entries_.lower_bound(prefix); it != entries_.end() && it->first.starts_with(prefix); ++it)
    ++n;
  return n;
}

void write_archive(const std::filesystem::path &path, const Archive &archive) {
  if (path.has_parent_path())
    std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out)
      throw IoError("cannot write checkpoint " + path.string());
    out.write(kMagic, sizeof(kMagic));
    put<std::uint32_t>(out, kArchiveVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(archive.entries().size()));
    for (const auto &[name, e] : archive.entries()) {
      put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      put<std::uint8_t>(out, static_cast<std::uint8_t>(e.dtype));
      put<std::uint8_t>(out, static_cast<std::uint8_t>(e.shape.size()));
      for (int d : e.shape)
        put<std::uint64_t>(out, static_cast<std::uint64_t>(d));
      put<std::uint64_t>(out, e.payload.size());
      out.write(reinterpret_cast<const char *>(e.payload.data()), static_cast<std::streamsize>(e.payload.size()));
    }
    if (!out)
      throw IoError("failed writing checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Archive read_archive(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw IoError("missing checkpoint " + path.string());
  Reader r(in, path);
  char magic[8];
  r.bytes(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    r.corrupt("bad magic");
  const auto version = r.get<std::uint32_t>();
  if (version != kArchiveVersion)
    r.corrupt("unsupported version " + std::to_string(version));
  const auto count = r.get<std::uint32_t>();
  Archive archive;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.get<std::uint32_t>();
    if (name_len > 4096)
      r.corrupt("entry name too long");
    std::string name(name_len, '\0');
    r.bytes(name.data(), name_len);
    ArchiveEntry e;
    const auto dtype = r.get<std::uint8_t>();
    if (dtype != static_cast<std::uint8_t>(DType::f64) && dtype != static_cast<std::uint8_t>(DType::u8))
      r.corrupt("unknown dtype for " + name);
    e.dtype = static_cast<DType>(dtype);
    const auto rank = r.get<std::uint8_t>();
    std::uint64_t elems = 1;
    for (int d = 0; d < rank; ++d) {
      const auto dim = r.get<std::uint64_t>();
      if (dim > (1ULL << 31))
        r.corrupt("dimension too large for " + name);
      e.shape.push_back(static_cast<int>(dim));
      elems *= dim;
    }
    const auto nbytes = r.get<std::uint64_t>();
    const std::uint64_t width = e.dtype == DType::f64 ? sizeof(double) : 1;
    if (nbytes != elems * width)
      r.corrupt("payload size mismatch for " + name);
    e.payload.resize(nbytes);
    r.bytes(e.payload.data(), nbytes);
    archive.entries()[name] = std::move(e);
  }
  return archive;
}

} // namespace gtseg
