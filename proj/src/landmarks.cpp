#include "clotseg/landmarks.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "clotseg/errors.hpp"

namespace clotseg {
namespace {

double quantile(const std::vector<float>& sorted, double q) {
  const auto n = static_cast<std::int64_t>(sorted.size());
  const double pos = q * static_cast<double>(n - 1);
  const auto lo = static_cast<std::int64_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, n - 1);
  const double frac = pos - static_cast<double>(lo);
  return (1.0 - frac) * static_cast<double>(sorted[static_cast<std::size_t>(lo)]) +
         frac * static_cast<double>(sorted[static_cast<std::size_t>(hi)]);
}

}  // namespace

LandmarkModel volume_landmarks(const Volume& vol, const std::string& modality) {
  const auto& data = vol.modality(modality);
  std::vector<float> fg;
  fg.reserve(data.size() / 2);
  for (float v : data) {
    if (v != 0.f) fg.push_back(v);
  }
  if (fg.size() < 2) {
    throw ValueError("landmarks: modality " + modality + " has no usable foreground");
  }
  std::sort(fg.begin(), fg.end());
  if (fg.front() == fg.back()) {
    throw ValueError("landmarks: modality " + modality + " is constant");
  }
  LandmarkModel model;
  for (int i = 0; i <= 10; ++i) model.landmarks[static_cast<std::size_t>(i)] =
      quantile(fg, static_cast<double>(i) / 10.0);
  return model;
}

LandmarkModel fit_landmarks(const std::vector<Volume>& volumes, const std::string& modality) {
  if (volumes.empty()) throw ValueError("fit_landmarks: need at least one training volume");
  LandmarkModel mean;
  for (const auto& vol : volumes) {
    const auto lm = volume_landmarks(vol, modality);
    for (std::size_t i = 0; i < mean.landmarks.size(); ++i) mean.landmarks[i] += lm.landmarks[i];
  }
  for (auto& v : mean.landmarks) v /= static_cast<double>(volumes.size());
  for (std::size_t i = 1; i < mean.landmarks.size(); ++i) {
    if (mean.landmarks[i] <= mean.landmarks[i - 1]) {
      throw ValueError("fit_landmarks: averaged landmarks are not strictly increasing");
    }
  }
  return mean;
}

Volume standardize(const Volume& vol, const std::map<std::string, LandmarkModel>& models) {
  Volume out = vol;
  for (std::size_t m = 0; m < out.modalities.size(); ++m) {
    if (!out.presence[m]) continue;
    const auto it = models.find(out.modality_names[m]);
    if (it == models.end()) continue;
    const auto& ref = it->second.landmarks;
    const auto own = volume_landmarks(vol, out.modality_names[m]).landmarks;
    for (auto& v : out.modalities[m]) {
      if (v == 0.f) continue;  // background
      const double x = static_cast<double>(v);
      double y;
      if (x <= own[0]) {
        y = ref[0];
      } else if (x >= own[10]) {
        y = ref[10];
      } else {
        std::size_t i = 0;
        while (i < 9 && x > own[i + 1]) ++i;
        const double width = own[i + 1] - own[i];
        y = width > 0 ? ref[i] + (x - own[i]) * (ref[i + 1] - ref[i]) / width : ref[i + 1];
      }
      v = static_cast<float>(y);
    }
  }
  return out;
}

std::string landmarks_to_string(const LandmarkModel& model) {
  std::ostringstream os;
  os.precision(17);
  for (std::size_t i = 0; i < model.landmarks.size(); ++i) {
    if (i) os << ',';
    os << model.landmarks[i];
  }
  return os.str();
}

LandmarkModel landmarks_from_string(const std::string& text) {
  LandmarkModel model;
  std::istringstream is(text);
  std::string token;
  for (auto& v : model.landmarks) {
    if (!std::getline(is, token, ',')) throw ValueError("landmarks: bad serialized model");
    v = std::stod(token);
  }
  return model;
}

}  // namespace clotseg
