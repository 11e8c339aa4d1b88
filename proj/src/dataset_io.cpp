#include "budgetdet/dataset_io.hpp"

#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>

namespace budgetdet {

namespace {

constexpr const char* kMagic = "budgetdet-dataset";
constexpr int kVersion = 1;

void put_double(std::ostream& os, double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  os << buf;
}

void expect(std::istream& is, const std::string& word) {
  std::string tok;
  if (!(is >> tok) || tok != word) {
    throw std::runtime_error("dataset: expected '" + word + "', got '" + tok + "'");
  }
}

template <typename T>
T read_value(std::istream& is, const char* what) {
  T v{};
  if (!(is >> v)) throw std::runtime_error(std::string("dataset: cannot read ") + what);
  return v;
}

}  // namespace

void write_dataset(std::ostream& os, const Dataset& data) {
  os << kMagic << ' ' << kVersion << '\n';
  os << "videos " << data.size() << '\n';
  for (const auto& lv : data) {
    const auto& v = lv.video;
    os << "video " << v.id << " frames " << v.num_frames << " dim " << v.dim << " diff "
       << (v.has_diff() ? 1 : 0) << '\n';
    for (int f = 0; f < v.num_frames; ++f) {
      const auto row = v.frame(f);
      for (std::size_t k = 0; k < row.size(); ++k) {
        if (k) os << ' ';
        put_double(os, row[k]);
      }
      os << '\n';
    }
    os << "gts " << lv.gts.size() << '\n';
    for (const auto& g : lv.gts.items) {
      put_double(os, g.segment.start);
      os << ' ';
      put_double(os, g.segment.end);
      os << ' ' << g.label << '\n';
    }
  }
}

void write_dataset(const std::string& path, const Dataset& data) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("dataset: cannot open " + path + " for writing");
  write_dataset(os, data);
  if (!os) throw std::runtime_error("dataset: write failed for " + path);
}

Dataset read_dataset(std::istream& is) {
  expect(is, kMagic);
  if (read_value<int>(is, "version") != kVersion) {
    throw std::runtime_error("dataset: unsupported version");
  }
  expect(is, "videos");
  const auto n = read_value<long>(is, "video count");
  if (n < 0) throw std::runtime_error("dataset: negative video count");
  Dataset data;
  data.reserve(static_cast<std::size_t>(n));
  for (long i = 0; i < n; ++i) {
    LabeledVideo lv;
    expect(is, "video");
    lv.video.id = read_value<std::string>(is, "video id");
    expect(is, "frames");
    lv.video.num_frames = read_value<int>(is, "frame count");
    expect(is, "dim");
    lv.video.dim = read_value<int>(is, "feature dim");
    expect(is, "diff");
    const int diff = read_value<int>(is, "diff flag");
    if (lv.video.num_frames < 1 || lv.video.dim < 1) {
      throw std::runtime_error("dataset: video " + lv.video.id + " has invalid shape");
    }
    lv.video.frames.resize(static_cast<std::size_t>(lv.video.num_frames) *
                           static_cast<std::size_t>(lv.video.dim));
    for (auto& x : lv.video.frames) x = read_value<double>(is, "feature value");
    expect(is, "gts");
    const auto g = read_value<long>(is, "gt count");
    for (long j = 0; j < g; ++j) {
      GroundTruthSegment gt;
      gt.segment.start = read_value<double>(is, "gt start");
      gt.segment.end = read_value<double>(is, "gt end");
      gt.label = read_value<int>(is, "gt label");
      if (!is_valid(gt.segment) || gt.label < 1) {
        throw std::runtime_error("dataset: invalid ground truth in video " + lv.video.id);
      }
      lv.gts.items.push_back(gt);
    }
    if (diff) attach_diff_channel(lv.video);
    data.push_back(std::move(lv));
  }
  return data;
}

Dataset read_dataset(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("dataset: cannot open " + path);
  return read_dataset(is);
}

}  // namespace budgetdet
