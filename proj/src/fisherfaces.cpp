#include "capsbench/fisherfaces.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <map>

#include "capsbench/checkpoint.hpp"
#include "capsbench/eig.hpp"
#include "capsbench/ops.hpp"

namespace capsbench {

FisherfaceModel fisher_fit(const Tensor& images, const std::vector<int>& labels,
                           int n_components) {
    if (images.ndim() != 2) throw ShapeError("fisher_fit: images must be N x P");
    const int N = images.dim(0), P = images.dim(1);
    if (static_cast<int>(labels.size()) != N)
        throw ShapeError("fisher_fit: label count does not match image count");

    std::map<int, int> class_counts;
    for (int l : labels) ++class_counts[l];
    const int C = static_cast<int>(class_counts.size());
    if (C < 2) throw DataError("fisher_fit: need at least two classes");
    if (N <= C) throw DataError("fisher_fit: need more samples than classes");
    for (const auto& [label, count] : class_counts)
        if (count < 2)
            throw DataError("fisher_fit: class " + std::to_string(label) +
                            " has fewer than two samples");

    if (n_components > C - 1) {
        std::cerr << "fisher_fit: n_components " << n_components << " clamped to C-1 = "
                  << C - 1 << "\n";
        n_components = C - 1;
    }
    if (n_components < 1) throw ConfigError("fisher_fit: n_components must be >= 1");

    FisherfaceModel model;
    model.mean_face = Tensor({P});
    for (int i = 0; i < N; ++i)
        for (int p = 0; p < P; ++p) model.mean_face[p] += images.at(i, p);
    for (int p = 0; p < P; ++p) model.mean_face[p] /= static_cast<real>(N);

    Tensor centered({N, P});
    for (int i = 0; i < N; ++i)
        for (int p = 0; p < P; ++p) centered.at(i, p) = images.at(i, p) - model.mean_face[p];

    // PCA to rank N-C via the Gram matrix (N x N instead of P x P).
    Tensor gram({N, N});
    matmul_nt(centered.data.data(), centered.data.data(), gram.data.data(), N, P, N);
    EigResult pca = symmetric_eig(gram);

    int r = std::min(N - C, N);
    const real eig_tol = std::max(pca.values[0], real(0)) * 1e-10 + 1e-12;
    while (r > 0 && pca.values[static_cast<size_t>(r - 1)] <= eig_tol) --r;
    if (r < 1) throw DataError("fisher_fit: centered data has no variance");

    Tensor u_top({N, r});
    for (int i = 0; i < N; ++i)
        for (int k = 0; k < r; ++k) u_top.at(i, k) = pca.vectors.at(i, k);
    model.pca_basis = Tensor({P, r});
    matmul_tn(centered.data.data(), u_top.data.data(), model.pca_basis.data.data(), N, P, r);
    for (int k = 0; k < r; ++k) {
        const real inv = real(1) / std::sqrt(pca.values[static_cast<size_t>(k)]);
        for (int p = 0; p < P; ++p) model.pca_basis.at(p, k) *= inv;
    }

    Tensor projected({N, r});
    matmul(centered.data.data(), model.pca_basis.data.data(), projected.data.data(), N, P, r);

    // Scatter matrices in the PCA subspace. The projected global mean is zero
    // because the data were centered before projecting.
    std::map<int, Tensor> class_means;
    for (const auto& [label, count] : class_counts) class_means.emplace(label, Tensor({r}));
    for (int i = 0; i < N; ++i) {
        Tensor& m = class_means.at(labels[static_cast<size_t>(i)]);
        for (int k = 0; k < r; ++k) m[k] += projected.at(i, k);
    }
    for (auto& [label, m] : class_means)
        for (int k = 0; k < r; ++k) m[k] /= static_cast<real>(class_counts.at(label));

    Tensor sb({r, r}), sw({r, r});
    for (const auto& [label, m] : class_means) {
        const real nc = static_cast<real>(class_counts.at(label));
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < r; ++j) sb.at(i, j) += nc * m[i] * m[j];
    }
    for (int i = 0; i < N; ++i) {
        const Tensor& m = class_means.at(labels[static_cast<size_t>(i)]);
        for (int a = 0; a < r; ++a) {
            const real da = projected.at(i, a) - m[a];
            for (int bcol = 0; bcol < r; ++bcol)
                sw.at(a, bcol) += da * (projected.at(i, bcol) - m[bcol]);
        }
    }

    EigResult swe = symmetric_eig(sw);
    const real sw_max = std::max(swe.values[0], real(0));
    // Near-singular (including exactly zero) within-class scatter is ridged
    // by 1e-6 I before whitening.
    real reg = 0;
    if (swe.values[static_cast<size_t>(r - 1)] <= sw_max * 1e-10) reg = 1e-6;

    // Whitening transform M = Q diag(1/sqrt(lambda + reg)).
    Tensor whiten({r, r});
    for (int i = 0; i < r; ++i) {
        const real lam = std::max(swe.values[static_cast<size_t>(i)], real(0)) + reg;
        if (!(lam > 0))
            throw DataError(
                "fisher_fit: within-class scatter is singular after PCA and regularization; "
                "check for degenerate training data");
        const real inv = real(1) / std::sqrt(lam);
        for (int k = 0; k < r; ++k) whiten.at(k, i) = swe.vectors.at(k, i) * inv;
    }
    Tensor tmp({r, r}), sb_w({r, r});
    matmul_tn(whiten.data.data(), sb.data.data(), tmp.data.data(), r, r, r);
    matmul(tmp.data.data(), whiten.data.data(), sb_w.data.data(), r, r, r);
    EigResult lda = symmetric_eig(sb_w);

    const int m = n_components;
    Tensor v_top({r, m});
    for (int i = 0; i < r; ++i)
        for (int k = 0; k < m; ++k) v_top.at(i, k) = lda.vectors.at(i, k);
    model.lda_basis = Tensor({r, m});
    matmul(whiten.data.data(), v_top.data.data(), model.lda_basis.data.data(), r, r, m);

    model.projection = Tensor({P, m});
    matmul(model.pca_basis.data.data(), model.lda_basis.data.data(),
           model.projection.data.data(), P, r, m);

    model.references = Tensor({N, m});
    matmul(centered.data.data(), model.projection.data.data(), model.references.data.data(), N,
           P, m);
    model.labels = labels;
    model.n_components = m;
    return model;
}

int fisher_predict(const FisherfaceModel& model, const Tensor& image) {
    const int P = static_cast<int>(model.mean_face.size());
    if (image.size() != P)
        throw ShapeError("fisher_predict: image has " + std::to_string(image.size()) +
                         " pixels, model expects " + std::to_string(P));
    const int m = model.n_components;
    Tensor centered({P});
    for (int p = 0; p < P; ++p) centered[p] = image[p] - model.mean_face[p];
    Tensor query({m});
    matmul(centered.data.data(), model.projection.data.data(), query.data.data(), 1, P, m);

    const int N = model.references.dim(0);
    int best_label = 0;
    real best_dist = std::numeric_limits<real>::infinity();
    for (int i = 0; i < N; ++i) {
        real d = 0;
        for (int k = 0; k < m; ++k) {
            const real diff = query[k] - model.references.at(i, k);
            d += diff * diff;
        }
        const int label = model.labels[static_cast<size_t>(i)];
        if (d < best_dist || (d == best_dist && label < best_label)) {
            best_dist = d;
            best_label = label;
        }
    }
    return best_label;
}

void save_fisherface(const std::string& path, const FisherfaceModel& model) {
    Checkpoint ckpt;
    ckpt.config_text =
        "model=fisherfaces\nn_components=" + std::to_string(model.n_components) + "\n";
    ckpt.blobs.emplace_back("mean_face", model.mean_face);
    ckpt.blobs.emplace_back("pca_basis", model.pca_basis);
    ckpt.blobs.emplace_back("lda_basis", model.lda_basis);
    ckpt.blobs.emplace_back("projection", model.projection);
    ckpt.blobs.emplace_back("references", model.references);
    Tensor label_blob({static_cast<int>(model.labels.size())});
    for (size_t i = 0; i < model.labels.size(); ++i)
        label_blob[static_cast<long>(i)] = static_cast<real>(model.labels[i]);
    ckpt.blobs.emplace_back("labels", std::move(label_blob));
    save_checkpoint(path, ckpt);
}

FisherfaceModel load_fisherface(const std::string& path) {
    Checkpoint ckpt = load_checkpoint(path);
    FisherfaceModel model;
    model.mean_face = ckpt.require("mean_face");
    model.pca_basis = ckpt.require("pca_basis");
    model.lda_basis = ckpt.require("lda_basis");
    model.projection = ckpt.require("projection");
    model.references = ckpt.require("references");
    const Tensor& label_blob = ckpt.require("labels");
    model.labels.resize(static_cast<size_t>(label_blob.size()));
    for (long i = 0; i < label_blob.size(); ++i)
        model.labels[static_cast<size_t>(i)] = static_cast<int>(label_blob[i]);
    model.n_components = model.projection.dim(1);
    return model;
}

}  // namespace capsbench
