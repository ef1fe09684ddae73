#pragma once

#include <string>
#include <vector>

#include "capsbench/tensor.hpp"

namespace capsbench {

// PCA-then-LDA subspace classifier with nearest-reference matching.
struct FisherfaceModel {
    Tensor mean_face;   // P
    Tensor pca_basis;   // P x r, orthonormal columns
    Tensor lda_basis;   // r x m
    Tensor projection;  // P x m, the combined transform W = W_pca * W_lda
    Tensor references;  // N x m projected training images
    std::vector<int> labels;
    int n_components = 0;  // m, at most C-1
};

// images: N x P row-per-sample matrix. Requires N > C and at least two
// samples per class. n_components is clamped to C-1 (with a warning on
// stderr) when it exceeds the between-class scatter rank bound.
FisherfaceModel fisher_fit(const Tensor& images, const std::vector<int>& labels,
                           int n_components = 40);

// Nearest projected reference by Euclidean distance; lowest label on ties.
int fisher_predict(const FisherfaceModel& model, const Tensor& image);

void save_fisherface(const std::string& path, const FisherfaceModel& model);
FisherfaceModel load_fisherface(const std::string& path);

}  // namespace capsbench
