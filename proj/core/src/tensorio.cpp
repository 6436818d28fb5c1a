#include "gcml/tensorio.hpp"

#include <fstream>
#include <limits>
#include "json.hpp"
#include <string>

#include "byteio.hpp"

namespace gcml {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid argument";
    case ErrorCode::kDimensionMismatch: return "dimension mismatch";
    case ErrorCode::kConfigMismatch: return "config mismatch";
    case ErrorCode::kOutOfRange: return "out of range";
    case ErrorCode::kIo: return "i/o error";
    case ErrorCode::kBadMagic: return "bad magic";
    case ErrorCode::kUnsupported: return "unsupported";
    case ErrorCode::kTruncated: return "truncated";
    case ErrorCode::kCorrupt: return "corrupt";
    case ErrorCode::kFrozen: return "frozen";
    case ErrorCode::kDegenerate: return "degenerate";
  }
  return "unknown";
}

namespace {

constexpr char kTensorMagic[4] = {'G', 'C', 'T', '1'};

// Product of dims, or max size_t on overflow.
std::size_t checked_product(const std::vector<std::uint32_t>& shape) {
  std::size_t n = 1;
  for (auto d : shape) {
    if (d != 0 && n > std::numeric_limits<std::size_t>::max() / d) {
      return std::numeric_limits<std::size_t>::max();
    }
    n *= d;
  }
  return n;
}

}  // namespace

TensorF32::TensorF32(std::vector<std::uint32_t> s, std::vector<float> d)
    : shape(std::move(s)), data(std::move(d)) {
  validate();
}

std::size_t TensorF32::element_count() const { return checked_product(shape); }

void TensorF32::validate() const {
  require(!shape.empty(), ErrorCode::kInvalidArgument, "tensor shape is empty");
  require(shape.size() <= 255, ErrorCode::kInvalidArgument, "tensor has more than 255 dims");
  for (auto d : shape) {
    require(d >= 1, ErrorCode::kInvalidArgument, "tensor dims must be >= 1");
  }
  require(element_count() == data.size(), ErrorCode::kInvalidArgument,
          "tensor shape product " + std::to_string(element_count()) +
              " does not match data length " + std::to_string(data.size()));
}

void write_tensor(const TensorF32& tensor, std::ostream& out) {
  tensor.validate();
  out.write(kTensorMagic, sizeof kTensorMagic);
  detail::put_le<std::uint8_t>(out, kDtypeF32);
  detail::put_le<std::uint8_t>(out, static_cast<std::uint8_t>(tensor.shape.size()));
  for (auto d : tensor.shape) detail::put_le<std::uint32_t>(out, d);
  for (float v : tensor.data) detail::put_f32(out, v);
  detail::check_stream(out, "tensor");
}

TensorF32 read_tensor(std::istream& in) {
  char magic[4];
  detail::read_exact(in, magic, sizeof magic, "tensor magic");
  if (!std::equal(std::begin(magic), std::end(magic), std::begin(kTensorMagic))) {
    fail(ErrorCode::kBadMagic, "not a GCT1 tensor (bad magic)");
  }
  const auto dtype = detail::get_le<std::uint8_t>(in, "tensor dtype");
  if (dtype != kDtypeF32) {
    fail(ErrorCode::kUnsupported, "unsupported tensor dtype code " + std::to_string(dtype));
  }
  const auto ndim = detail::get_le<std::uint8_t>(in, "tensor ndim");
  require(ndim >= 1, ErrorCode::kCorrupt, "tensor declares zero dims");

  TensorF32 t;
  t.shape.resize(ndim);
  for (auto& d : t.shape) {
    d = detail::get_le<std::uint32_t>(in, "tensor dims");
    require(d >= 1, ErrorCode::kCorrupt, "tensor declares a zero-length dim");
  }
  const std::size_t count = t.element_count();
  require(count != std::numeric_limits<std::size_t>::max(), ErrorCode::kCorrupt,
          "tensor element count overflows");

  // Grow incrementally so a corrupt header cannot force a huge allocation
  // before truncation is detected.
  constexpr std::size_t kChunk = std::size_t{1} << 16;
  t.data.reserve(std::min(count, kChunk));
  for (std::size_t i = 0; i < count; ++i) {
    t.data.push_back(detail::get_f32(in, "tensor payload"));
  }
  return t;
}

void save_tensor(const TensorF32& tensor, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot open " + path.string() + " for writing");
  write_tensor(tensor, out);
  out.flush();
  detail::check_stream(out, path.string().c_str());
}

TensorF32 load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open " + path.string());
  auto t = read_tensor(in);
  require(detail::at_end(in), ErrorCode::kCorrupt, "trailing bytes after tensor in " + path.string());
  return t;
}

void DatasetManifest::validate() const {
  require(!class_labels.empty(), ErrorCode::kInvalidArgument, "manifest has no classes");
  for (const auto& s : samples) {
    require(s.label < class_labels.size(), ErrorCode::kOutOfRange,
            "sample " + s.path.string() + " has label " + std::to_string(s.label) +
                " but only " + std::to_string(class_labels.size()) + " classes exist");
  }
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open manifest " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kCorrupt, "manifest " + path.string() + " is not valid JSON: " + e.what());
  }

  DatasetManifest m;
  const auto base = path.parent_path();
  try {
    for (const auto& c : doc.at("classes")) m.class_labels.push_back(c.get<std::string>());
    for (const auto& s : doc.at("samples")) {
      DatasetSample sample;
      std::filesystem::path p = s.at("path").get<std::string>();
      sample.path = p.is_absolute() ? p : base / p;
      const auto label = s.at("label").get<std::int64_t>();
      require(label >= 0, ErrorCode::kOutOfRange, "negative label in manifest");
      sample.label = static_cast<std::size_t>(label);
      m.samples.push_back(std::move(sample));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kCorrupt, "manifest " + path.string() + ": " + e.what());
  }
  m.validate();
  return m;
}

void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  manifest.validate();
  const auto base = path.parent_path();
  nlohmann::json doc;
  doc["classes"] = manifest.class_labels;
  doc["samples"] = nlohmann::json::array();
  for (const auto& s : manifest.samples) {
    auto p = s.path;
    if (!base.empty()) {
      const auto abs_path = std::filesystem::absolute(p).lexically_normal();
      const auto rel = abs_path.lexically_relative(std::filesystem::absolute(base).lexically_normal());
      p = (!rel.empty() && *rel.begin() != "..") ? rel : abs_path;
    }
    doc["samples"].push_back({{"path", p.generic_string()}, {"label", s.label}});
  }
  std::ofstream out(path, std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot open " + path.string() + " for writing");
  out << doc.dump(2) << '\n';
  detail::check_stream(out, path.string().c_str());
}

}  // namespace gcml
