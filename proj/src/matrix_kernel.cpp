#include "igo/matrix_kernel.hpp"

#include <algorithm>
#include <cmath>

namespace igo::linalg
{

namespace
{

void require_square(const Matrix &m, const char *what)
{
    if (!is_square(m) || m.rows() == 0)
    {
        throw DimensionMismatch(std::string(what) + ": expected a non-empty square matrix, got " +
                                std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
    }
}

void require_symmetric(const Matrix &m, const char *what)
{
    require_square(m, what);
    if (!all_finite(m))
    {
        throw InvalidInput(std::string(what) + ": non-finite entries");
    }
    if (!is_symmetric(m))
    {
        throw InvalidInput(std::string(what) + ": matrix is not symmetric");
    }
}

// Make the first non-negligible component of every eigenvector positive so the
// decomposition is reproducible.
void normalize_signs(Matrix &vectors)
{
    for (Eigen::Index k = 0; k < vectors.cols(); ++k)
    {
        for (Eigen::Index i = 0; i < vectors.rows(); ++i)
        {
            if (std::abs(vectors(i, k)) > 1e-14)
            {
                if (vectors(i, k) < 0.0)
                {
                    vectors.col(k) *= -1.0;
                }
                break;
            }
        }
    }
}

Matrix spectral_function(const EigenDecomposition &eig, double (*fn)(double))
{
    Vector mapped = eig.values.unaryExpr(fn);
    return eig.vectors * mapped.asDiagonal() * eig.vectors.transpose();
}

} // namespace

bool all_finite(const Matrix &m)
{
    return m.allFinite();
}

bool is_square(const Matrix &m)
{
    return m.rows() == m.cols();
}

bool is_symmetric(const Matrix &m, double tolerance)
{
    if (!is_square(m))
    {
        return false;
    }
    for (Eigen::Index i = 0; i < m.rows(); ++i)
    {
        for (Eigen::Index j = i + 1; j < m.cols(); ++j)
        {
            const double scale = std::max(1.0, std::abs(m(i, j)));
            if (std::abs(m(i, j) - m(j, i)) > tolerance * scale)
            {
                return false;
            }
        }
    }
    return true;
}

Matrix symmetrize(const Matrix &m)
{
    require_square(m, "symmetrize");
    Matrix out = m;
    for (Eigen::Index i = 0; i < m.rows(); ++i)
    {
        for (Eigen::Index j = i + 1; j < m.cols(); ++j)
        {
            const double v = 0.5 * (m(i, j) + m(j, i));
            out(i, j) = v;
            out(j, i) = v;
        }
    }
    return out;
}

EigenDecomposition sym_eigen(const Matrix &m)
{
    require_symmetric(m, "sym_eigen");
    Eigen::SelfAdjointEigenSolver<Matrix> solver(symmetrize(m));
    if (solver.info() != Eigen::Success)
    {
        throw InvalidInput("sym_eigen: eigen solver did not converge");
    }
    const Eigen::Index d = m.rows();
    EigenDecomposition out;
    out.values.resize(d);
    out.vectors.resize(d, d);
    // Eigen sorts ascending; reversing keeps equal eigenvalues in encounter order.
    for (Eigen::Index k = 0; k < d; ++k)
    {
        out.values(k) = solver.eigenvalues()(d - 1 - k);
        out.vectors.col(k) = solver.eigenvectors().col(d - 1 - k);
    }
    normalize_signs(out.vectors);
    return out;
}

SpdMatrix::SpdMatrix(const Matrix &m)
{
    require_symmetric(m, "SpdMatrix");
    m_ = symmetrize(m);
    const double lo = min_eigenvalue();
    if (!(lo > 0.0))
    {
        throw NotPositiveDefinite("SpdMatrix: smallest eigenvalue " + std::to_string(lo) + " is not positive");
    }
}

SpdMatrix SpdMatrix::identity(int dim)
{
    return SpdMatrix(Matrix::Identity(dim, dim));
}

SpdMatrix SpdMatrix::diagonal(const Vector &d)
{
    return SpdMatrix(Matrix(d.asDiagonal()));
}

double SpdMatrix::min_eigenvalue() const
{
    Eigen::SelfAdjointEigenSolver<Matrix> solver(m_, Eigen::EigenvaluesOnly);
    return solver.eigenvalues()(0);
}

double SpdMatrix::max_eigenvalue() const
{
    Eigen::SelfAdjointEigenSolver<Matrix> solver(m_, Eigen::EigenvaluesOnly);
    return solver.eigenvalues()(m_.rows() - 1);
}

double SpdMatrix::log_determinant() const
{
    Eigen::LLT<Matrix> llt(m_);
    if (llt.info() != Eigen::Success)
    {
        Eigen::SelfAdjointEigenSolver<Matrix> solver(m_, Eigen::EigenvaluesOnly);
        return solver.eigenvalues().array().log().sum();
    }
    return 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
}

double SpdMatrix::determinant() const
{
    return std::exp(log_determinant());
}

SpdMatrix spd_sqrt(const SpdMatrix &m)
{
    const EigenDecomposition eig = sym_eigen(m.matrix());
    return SpdMatrix(symmetrize(spectral_function(eig, [](double v) { return std::sqrt(v); })));
}

SpdMatrix spd_inverse_sqrt(const SpdMatrix &m)
{
    const EigenDecomposition eig = sym_eigen(m.matrix());
    return SpdMatrix(symmetrize(spectral_function(eig, [](double v) { return 1.0 / std::sqrt(v); })));
}

SpdMatrix spd_inverse(const SpdMatrix &m)
{
    const EigenDecomposition eig = sym_eigen(m.matrix());
    return SpdMatrix(symmetrize(spectral_function(eig, [](double v) { return 1.0 / v; })));
}

double condition_number(const Matrix &m)
{
    const EigenDecomposition eig = sym_eigen(m);
    const double lo = eig.values(eig.values.size() - 1);
    if (!(lo > 0.0))
    {
        throw NotPositiveDefinite("condition_number: smallest eigenvalue is not positive");
    }
    return eig.values(0) / lo;
}

double product_condition_number(const SpdMatrix &a, const SpdMatrix &b)
{
    return condition_number(sandwich(b, a.matrix()));
}

double largest_singular_value(const Matrix &m)
{
    if (!all_finite(m))
    {
        throw InvalidInput("largest_singular_value: non-finite entries");
    }
    if (m.size() == 0)
    {
        return 0.0;
    }
    const Matrix gram = symmetrize(m.transpose() * m);
    Eigen::SelfAdjointEigenSolver<Matrix> solver(gram, Eigen::EigenvaluesOnly);
    return std::sqrt(std::max(0.0, solver.eigenvalues()(gram.rows() - 1)));
}

double frobenius_norm(const Matrix &m)
{
    if (!all_finite(m))
    {
        throw InvalidInput("frobenius_norm: non-finite entries");
    }
    return std::sqrt((m.transpose() * m).trace());
}

Matrix sandwich(const SpdMatrix &a, const Matrix &b)
{
    if (b.rows() != a.dim() || b.cols() != a.dim())
    {
        throw DimensionMismatch("sandwich: dimension mismatch");
    }
    const Matrix root = spd_sqrt(a).matrix();
    return symmetrize(root * b * root);
}

double largest_eigenvalue(const Matrix &m)
{
    require_symmetric(m, "largest_eigenvalue");
    Eigen::SelfAdjointEigenSolver<Matrix> solver(symmetrize(m), Eigen::EigenvaluesOnly);
    return solver.eigenvalues()(m.rows() - 1);
}

double largest_relative_eigenvalue(const SpdMatrix &sigma, const Matrix &delta)
{
    if (delta.rows() != sigma.dim() || delta.cols() != sigma.dim())
    {
        throw DimensionMismatch("largest_relative_eigenvalue: dimension mismatch");
    }
    const Matrix inv_root = spd_inverse_sqrt(sigma).matrix();
    return largest_eigenvalue(symmetrize(inv_root * delta * inv_root));
}

} // namespace igo::linalg
