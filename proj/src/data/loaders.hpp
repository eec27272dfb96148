#pragma once

#include <string>

#include "data/dataset.hpp"

namespace mapkit::data {

/// MNIST idx files (plain or .gz) from `dir`:
///   train-images-idx3-ubyte[.gz], train-labels-idx1-ubyte[.gz],
///   t10k-images-idx3-ubyte[.gz],  t10k-labels-idx1-ubyte[.gz]
DomainDataset load_mnist_idx(const std::string& dir, const std::string& split, int64_t limit);

/// USPS in the classic zip.train / zip.test text format (plain or .gz),
/// 16x16 [-1,1] pixels, bilinearly upsampled to 28x28.
DomainDataset load_usps(const std::string& dir, const std::string& split, int64_t limit);

}  // namespace mapkit::data
