#pragma once

#include <string>
#include <vector>

#include "capsbench/tensor.hpp"

namespace capsbench {

// --- PGM ("P5" binary / "P2" ASCII) ---
// Returns HxWx1 with values scaled to [0,1] by the file's maxval.
Tensor load_pgm(const std::string& path);
Tensor parse_pgm(const std::vector<unsigned char>& bytes, const std::string& origin = "<memory>");
// Writes binary P5 with the given maxval; values are clamped to [0,1] first.
void save_pgm(const std::string& path, const Tensor& image, int maxval = 255);
std::vector<unsigned char> encode_pgm(const Tensor& image, int maxval = 255, bool binary = true);

// --- CIFAR-100 binary (3074-byte records: coarse, fine, 3x1024 planes) ---
struct Cifar100Record {
    Tensor rgb;  // 32x32x3 in [0,1]
    int fine = 0;
    int coarse = 0;
};
std::vector<Cifar100Record> load_cifar100_binary(const std::string& path);
std::vector<Cifar100Record> parse_cifar100(const std::vector<unsigned char>& bytes,
                                           const std::string& origin = "<memory>");
std::vector<unsigned char> encode_cifar100(const std::vector<Cifar100Record>& records);
void save_cifar100_binary(const std::string& path, const std::vector<Cifar100Record>& records);

// --- pixel transforms ---
// BT.601 luma: y = 0.299 r + 0.587 g + 0.114 b. Input HxWx3 -> HxWx1.
Tensor to_grayscale(const Tensor& rgb);
// (x - min) / (max - min); a constant image maps to all zeros.
Tensor min_max_normalize(const Tensor& image);
// CDF remap over `levels` bins, output clamped to [0,1]. Input values must
// already be in [0,1].
Tensor histogram_equalize(const Tensor& image, int levels = 256);
// Bilinear, edge-clamped, align-corners=false. Works per channel.
Tensor resize_bilinear(const Tensor& image, int new_h, int new_w);

// Intensity range (max - min) and histogram entropy in bits over `levels`
// bins; used by the conditional-equalization policy.
real intensity_range(const Tensor& image);
real histogram_entropy(const Tensor& image, int levels = 256);

std::vector<unsigned char> read_file_bytes(const std::string& path);

}  // namespace capsbench
