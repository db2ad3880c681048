#pragma once

#include <cmath>
#include <cstddef>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cfscm/tensor.hpp"

namespace cfscm {

// Attribute rows plus flattened images. Images are stored N x P (P = 256
// for the 16x16 default). The hidden noise record is kept in a separate
// file so models never see it.
struct Dataset {
  std::size_t image_rows = 16, image_cols = 16;
  Tensor images;                 // N x (rows*cols)
  std::vector<std::size_t> y;    // class per sample
  std::vector<double> t, i;

  std::size_t size() const { return y.size(); }
  std::size_t pixels() const { return image_rows * image_cols; }

  Tensor image(std::size_t r) const {
    Tensor img({image_rows, image_cols});
    for (std::size_t k = 0; k < pixels(); ++k) img[k] = images.at2(r, k);
    return img;
  }
  std::vector<double> image_vec(std::size_t r) const {
    std::vector<double> v(pixels());
    for (std::size_t k = 0; k < pixels(); ++k) v[k] = images.at2(r, k);
    return v;
  }
};

inline void save_attributes_csv(const std::string& path, const Dataset& d) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("save_attributes_csv: cannot open " + path);
  os.precision(17);
  os << "id,y,t,i\n";
  for (std::size_t r = 0; r < d.size(); ++r)
    os << r << "," << d.y[r] << "," << d.t[r] << "," << d.i[r] << "\n";
}

inline void load_attributes_csv(const std::string& path, Dataset& d) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("load_attributes_csv: cannot open " + path);
  std::string line;
  std::getline(is, line);  // header
  d.y.clear();
  d.t.clear();
  d.i.clear();
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string cell;
    std::getline(ss, cell, ',');
    std::getline(ss, cell, ',');
    d.y.push_back(static_cast<std::size_t>(std::stoul(cell)));
    std::getline(ss, cell, ',');
    d.t.push_back(std::stod(cell));
    std::getline(ss, cell, ',');
    d.i.push_back(std::stod(cell));
  }
}

// On disk the images live as a rank-3 N x rows x cols tensor.
inline void save_dataset(const std::string& dir, const Dataset& d,
                         const Tensor* noises = nullptr) {
  Tensor imgs({d.images.shape[0], d.image_rows, d.image_cols}, d.images.data);
  save_cft1(dir + "/images.cft", imgs);
  save_attributes_csv(dir + "/attributes.csv", d);
  if (noises) save_cft1(dir + "/noises.cft", *noises);
}

inline Dataset load_dataset(const std::string& dir) {
  Dataset d;
  Tensor imgs = load_cft1(dir + "/images.cft");
  if (imgs.rank() != 3)
    throw std::runtime_error("load_dataset: images.cft must be rank 3");
  d.image_rows = imgs.shape[1];
  d.image_cols = imgs.shape[2];
  d.images = Tensor({imgs.shape[0], imgs.shape[1] * imgs.shape[2]},
                    std::move(imgs.data));
  load_attributes_csv(dir + "/attributes.csv", d);
  if (d.images.shape[0] != d.size())
    throw std::runtime_error("load_dataset: image/attribute row count mismatch");
  return d;
}

// Parent encoding for models of x: one-hot class followed by the scalar
// attributes. Standardization stats are fit on training data and reused
// bit-exactly at counterfactual time.
inline constexpr std::size_t kNumClasses = 3;
inline constexpr std::size_t kPaDim = kNumClasses + 2;

struct PaScaler {
  double t_mean = 0.0, t_std = 1.0, i_mean = 0.0, i_std = 1.0;

  static PaScaler fit(const Dataset& d) {
    PaScaler s;
    if (d.size() == 0) return s;
    auto stats = [&](const std::vector<double>& v, double& mean, double& sd) {
      double m = 0.0;
      for (double x : v) m += x;
      m /= static_cast<double>(v.size());
      double var = 0.0;
      for (double x : v) var += (x - m) * (x - m);
      var /= static_cast<double>(v.size());
      mean = m;
      sd = var > 0.0 ? std::sqrt(var) : 1.0;
    };
    stats(d.t, s.t_mean, s.t_std);
    stats(d.i, s.i_mean, s.i_std);
    return s;
  }

  std::vector<double> encode(std::size_t y, double t, double i) const {
    std::vector<double> pa(kPaDim, 0.0);
    if (y >= kNumClasses) throw std::out_of_range("PaScaler: class out of support");
    pa[y] = 1.0;
    pa[kNumClasses] = (t - t_mean) / t_std;
    pa[kNumClasses + 1] = (i - i_mean) / i_std;
    return pa;
  }
};

}  // namespace cfscm
