/**
 * @file matrix_kernel.hpp
 * @brief Dense symmetric positive definite matrix utilities.
 *
 * Every covariance-like quantity in the library (search covariance, Hessians,
 * state-space noise covariances) goes through these helpers. Decompositions are
 * backed by Eigen's self-adjoint solver; eigenvalues are always reported in
 * descending order.
 */

#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace igo::linalg
{

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

class InvalidInput : public std::invalid_argument
{
public:
    using std::invalid_argument::invalid_argument;
};

class NotPositiveDefinite : public std::domain_error
{
public:
    using std::domain_error::domain_error;
};

class DimensionMismatch : public std::invalid_argument
{
public:
    using std::invalid_argument::invalid_argument;
};

/// Relative symmetry tolerance: |m(i,j) - m(j,i)| <= kSymmetryTolerance * max(1, |m(i,j)|).
inline constexpr double kSymmetryTolerance = 1e-12;

struct EigenDecomposition
{
    Vector values;  // descending
    Matrix vectors; // column k pairs with values(k)
};

bool all_finite(const Matrix &m);
bool is_square(const Matrix &m);
bool is_symmetric(const Matrix &m, double tolerance = kSymmetryTolerance);

/// (m + m^T) / 2, exactly symmetric.
Matrix symmetrize(const Matrix &m);

/**
 * Symmetric positive definite matrix.
 *
 * Construction validates squareness, finiteness, symmetry (within
 * kSymmetryTolerance) and a strictly positive smallest eigenvalue. The stored
 * matrix is symmetrized, so stored entries are exactly symmetric.
 */
class SpdMatrix
{
public:
    explicit SpdMatrix(const Matrix &m);

    static SpdMatrix identity(int dim);
    static SpdMatrix diagonal(const Vector &d);

    int dim() const { return static_cast<int>(m_.rows()); }
    const Matrix &matrix() const { return m_; }
    double operator()(int i, int j) const { return m_(i, j); }

    double min_eigenvalue() const;
    double max_eigenvalue() const;
    double log_determinant() const;
    double determinant() const;

private:
    Matrix m_;
};

/// Eigen-decomposition of a symmetric matrix; throws InvalidInput on non-finite
/// or asymmetric input.
EigenDecomposition sym_eigen(const Matrix &m);

SpdMatrix spd_sqrt(const SpdMatrix &m);
SpdMatrix spd_inverse_sqrt(const SpdMatrix &m);
SpdMatrix spd_inverse(const SpdMatrix &m);

/// lambda_max / lambda_min of a symmetric matrix; NotPositiveDefinite when lambda_min <= 0.
double condition_number(const Matrix &m);
inline double condition_number(const SpdMatrix &m) { return condition_number(m.matrix()); }

/// Condition number of a product a*b of two SPD matrices, via the similar
/// symmetric matrix sqrt(b) a sqrt(b).
double product_condition_number(const SpdMatrix &a, const SpdMatrix &b);

double largest_singular_value(const Matrix &m);
double frobenius_norm(const Matrix &m);

/// sqrt(a) * b * sqrt(a) for symmetric b; result symmetrized.
Matrix sandwich(const SpdMatrix &a, const Matrix &b);

/// Largest eigenvalue of a symmetric matrix.
double largest_eigenvalue(const Matrix &m);

/// Largest eigenvalue of sigma^{-1} * delta for symmetric delta, computed on the
/// similar symmetric matrix sqrt(sigma)^{-1} delta sqrt(sigma)^{-1}.
double largest_relative_eigenvalue(const SpdMatrix &sigma, const Matrix &delta);

} // namespace igo::linalg
