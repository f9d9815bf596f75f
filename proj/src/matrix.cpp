/*
 * Copyright 2026 prpl Contributors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "prpl/matrix.hpp"

#include <cassert>
#include <cmath>
#include <stdexcept>

namespace prpl {

namespace {

void check_mul(std::size_t ak, std::size_t bk, const char* what) {
    if (ak != bk) throw std::invalid_argument(std::string("matmul dimension mismatch in ") + what);
}

}  // namespace

void matmul_acc(const Matrix& a, const Matrix& b, Matrix& c) {
    check_mul(a.cols, b.rows, "matmul");
    assert(c.rows == a.rows && c.cols == b.cols);
    // i-k-j order keeps the inner loop contiguous in b and c.
    for (std::size_t i = 0; i < a.rows; ++i) {
        double* crow = c.data.data() + i * c.cols;
        const double* arow = a.data.data() + i * a.cols;
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double aik = arow[k];
            if (aik == 0.0) continue;
            const double* brow = b.data.data() + k * b.cols;
            for (std::size_t j = 0; j < b.cols; ++j) crow[j] += aik * brow[j];
        }
    }
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    Matrix c(a.rows, b.cols);
    matmul_acc(a, b, c);
    return c;
}

void matmul_tn_acc(const Matrix& a, const Matrix& b, Matrix& c) {
    check_mul(a.rows, b.rows, "matmul_tn");
    assert(c.rows == a.cols && c.cols == b.cols);
    for (std::size_t k = 0; k < a.rows; ++k) {
        const double* arow = a.data.data() + k * a.cols;
        const double* brow = b.data.data() + k * b.cols;
        for (std::size_t i = 0; i < a.cols; ++i) {
            const double aki = arow[i];
            if (aki == 0.0) continue;
            double* crow = c.data.data() + i * c.cols;
            for (std::size_t j = 0; j < b.cols; ++j) crow[j] += aki * brow[j];
        }
    }
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    Matrix c(a.cols, b.cols);
    matmul_tn_acc(a, b, c);
    return c;
}

void matmul_nt_acc(const Matrix& a, const Matrix& b, Matrix& c) {
    check_mul(a.cols, b.cols, "matmul_nt");
    assert(c.rows == a.rows && c.cols == b.rows);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* arow = a.data.data() + i * a.cols;
        double* crow = c.data.data() + i * c.cols;
        for (std::size_t j = 0; j < b.rows; ++j) {
            const double* brow = b.data.data() + j * b.cols;
            double s = 0.0;
            for (std::size_t k = 0; k < a.cols; ++k) s += arow[k] * brow[k];
            crow[j] += s;
        }
    }
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    Matrix c(a.rows, b.rows);
    matmul_nt_acc(a, b, c);
    return c;
}

void add_row_vector(Matrix& m, std::span<const double> v) {
    if (v.size() != m.cols) throw std::invalid_argument("add_row_vector length mismatch");
    for (std::size_t i = 0; i < m.rows; ++i) {
        double* row = m.data.data() + i * m.cols;
        for (std::size_t j = 0; j < m.cols; ++j) row[j] += v[j];
    }
}

Matrix transpose(const Matrix& m) {
    Matrix t(m.cols, m.rows);
    for (std::size_t i = 0; i < m.rows; ++i)
        for (std::size_t j = 0; j < m.cols; ++j) t.at(j, i) = m.at(i, j);
    return t;
}

bool all_finite(const Matrix& m) { return all_finite(std::span<const double>(m.data)); }

bool all_finite(std::span<const double> v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

double dot(std::span<const double> a, std::span<const double> b) {
    assert(a.size() == b.size());
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double norm2(std::span<const double> v) { return std::sqrt(dot(v, v)); }

}  // namespace prpl
