#include "amao/kernels.hpp"

#include <algorithm>
#include <cmath>

namespace amao::nn {

namespace {

// Four interleaved partial sums break the add dependency chain; the grouping
// is fixed, so the result does not depend on scheduling.
double dot(const double* a, const double* b, std::size_t n)
{
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    for (; i < n; ++i)
        s0 += a[i] * b[i];
    return (s0 + s1) + (s2 + s3);
}

} // namespace

void conv_forward(const ConvShape& s, std::span<const double> in, std::span<const double> weight,
                  std::span<const double> bias, std::span<double> out)
{
    const std::size_t oh = s.oh(), ow = s.ow();
    const auto cout = static_cast<std::ptrdiff_t>(s.cout);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t co = 0; co < cout; ++co) {
        double* o = out.data() + co * oh * ow;
        std::fill(o, o + oh * ow, bias[co]);
        for (std::size_t ci = 0; ci < s.cin; ++ci) {
            const double* src = in.data() + ci * s.h * s.w;
            const double* wk = weight.data() + ((co * s.cin + ci) * s.k) * s.k;
            for (std::size_t ky = 0; ky < s.k; ++ky)
                for (std::size_t kx = 0; kx < s.k; ++kx) {
                    const double wv = wk[ky * s.k + kx];
                    for (std::size_t y = 0; y < oh; ++y) {
                        const double* row = src + (y + ky) * s.w + kx;
                        double* orow = o + y * ow;
                        for (std::size_t x = 0; x < ow; ++x)
                            orow[x] += wv * row[x];
                    }
                }
        }
    }
}

void conv_forward_serial(const ConvShape& s, std::span<const double> in, std::span<const double> weight,
                         std::span<const double> bias, std::span<double> out)
{
    const std::size_t oh = s.oh(), ow = s.ow();
    for (std::size_t co = 0; co < s.cout; ++co)
        for (std::size_t y = 0; y < oh; ++y)
            for (std::size_t x = 0; x < ow; ++x) {
                double acc = bias[co];
                for (std::size_t ci = 0; ci < s.cin; ++ci)
                    for (std::size_t ky = 0; ky < s.k; ++ky)
                        for (std::size_t kx = 0; kx < s.k; ++kx)
                            acc += weight[((co * s.cin + ci) * s.k + ky) * s.k + kx] *
                                   in[(ci * s.h + y + ky) * s.w + x + kx];
                out[(co * oh + y) * ow + x] = acc;
            }
}

void conv_backward(const ConvShape& s, std::span<const double> in, std::span<const double> weight,
                   std::span<const double> grad_out, std::span<double> grad_in, std::span<double> grad_weight,
                   std::span<double> grad_bias)
{
    const std::size_t oh = s.oh(), ow = s.ow();
    const auto cout = grad_weight.empty() ? 0 : static_cast<std::ptrdiff_t>(s.cout);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t co = 0; co < cout; ++co) {
        const double* g = grad_out.data() + co * oh * ow;
        double gb = 0.0;
        for (std::size_t i = 0; i < oh * ow; ++i)
            gb += g[i];
        grad_bias[co] += gb;
        for (std::size_t ci = 0; ci < s.cin; ++ci) {
            const double* src = in.data() + ci * s.h * s.w;
            double* gw = grad_weight.data() + ((co * s.cin + ci) * s.k) * s.k;
            for (std::size_t ky = 0; ky < s.k; ++ky)
                for (std::size_t kx = 0; kx < s.k; ++kx) {
                    double acc = 0.0;
                    for (std::size_t y = 0; y < oh; ++y)
                        acc += dot(g + y * ow, src + (y + ky) * s.w + kx, ow);
                    gw[ky * s.k + kx] += acc;
                }
        }
    }
    if (grad_in.empty())
        return;
    const auto cin = static_cast<std::ptrdiff_t>(s.cin);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t ci = 0; ci < cin; ++ci) {
        double* gi = grad_in.data() + ci * s.h * s.w;
        std::fill(gi, gi + s.h * s.w, 0.0);
        for (std::size_t co = 0; co < s.cout; ++co) {
            const double* g = grad_out.data() + co * oh * ow;
            const double* wk = weight.data() + ((co * s.cin + ci) * s.k) * s.k;
            for (std::size_t ky = 0; ky < s.k; ++ky)
                for (std::size_t kx = 0; kx < s.k; ++kx) {
                    const double wv = wk[ky * s.k + kx];
                    for (std::size_t y = 0; y < oh; ++y) {
                        double* row = gi + (y + ky) * s.w + kx;
                        const double* grow = g + y * ow;
                        for (std::size_t x = 0; x < ow; ++x)
                            row[x] += wv * grow[x];
                    }
                }
        }
    }
}

void conv_backward_serial(const ConvShape& s, std::span<const double> in, std::span<const double> weight,
                          std::span<const double> grad_out, std::span<double> grad_in,
                          std::span<double> grad_weight, std::span<double> grad_bias)
{
    const std::size_t oh = s.oh(), ow = s.ow();
    if (!grad_in.empty())
        std::fill(grad_in.begin(), grad_in.end(), 0.0);
    for (std::size_t co = 0; co < s.cout; ++co)
        for (std::size_t y = 0; y < oh; ++y)
            for (std::size_t x = 0; x < ow; ++x) {
                const double g = grad_out[(co * oh + y) * ow + x];
                grad_bias[co] += g;
                for (std::size_t ci = 0; ci < s.cin; ++ci)
                    for (std::size_t ky = 0; ky < s.k; ++ky)
                        for (std::size_t kx = 0; kx < s.k; ++kx) {
                            const std::size_t wi = ((co * s.cin + ci) * s.k + ky) * s.k + kx;
                            const std::size_t ii = (ci * s.h + y + ky) * s.w + x + kx;
                            grad_weight[wi] += g * in[ii];
                            if (!grad_in.empty())
                                grad_in[ii] += g * weight[wi];
                        }
            }
}

void maxpool_forward(std::size_t c, std::size_t h, std::size_t w, std::span<const double> in, std::span<double> out,
                     std::span<std::size_t> argmax)
{
    const std::size_t ph = h / 2, pw = w / 2;
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < ph; ++y)
            for (std::size_t x = 0; x < pw; ++x) {
                std::size_t best = (ch * h + 2 * y) * w + 2 * x;
                for (std::size_t dy = 0; dy < 2; ++dy)
                    for (std::size_t dx = 0; dx < 2; ++dx) {
                        const std::size_t i = (ch * h + 2 * y + dy) * w + 2 * x + dx;
                        if (in[i] > in[best])
                            best = i;
                    }
                const std::size_t o = (ch * ph + y) * pw + x;
                out[o] = in[best];
                argmax[o] = best;
            }
}

void maxpool_backward(std::span<const double> grad_out, std::span<const std::size_t> argmax,
                      std::span<double> grad_in)
{
    std::fill(grad_in.begin(), grad_in.end(), 0.0);
    for (std::size_t o = 0; o < grad_out.size(); ++o)
        grad_in[argmax[o]] += grad_out[o];
}

void dense_forward(std::size_t nin, std::size_t nout, std::span<const double> in, std::span<const double> weight,
                   std::span<const double> bias, std::span<double> out)
{
    const auto n = static_cast<std::ptrdiff_t>(nout);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t o = 0; o < n; ++o) {
        out[o] = bias[o] + dot(weight.data() + o * nin, in.data(), nin);
    }
}

void dense_forward_serial(std::size_t nin, std::size_t nout, std::span<const double> in,
                          std::span<const double> weight, std::span<const double> bias, std::span<double> out)
{
    for (std::size_t o = 0; o < nout; ++o) {
        double acc = 0.0;
        for (std::size_t i = 0; i < nin; ++i)
            acc += weight[o * nin + i] * in[i];
        out[o] = bias[o] + acc;
    }
}

void dense_backward(std::size_t nin, std::size_t nout, std::span<const double> in, std::span<const double> weight,
                    std::span<const double> grad_out, std::span<double> grad_in, std::span<double> grad_weight,
                    std::span<double> grad_bias)
{
    const auto n = grad_weight.empty() ? 0 : static_cast<std::ptrdiff_t>(nout);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t o = 0; o < n; ++o) {
        const double g = grad_out[o];
        grad_bias[o] += g;
        double* gw = grad_weight.data() + o * nin;
        for (std::size_t i = 0; i < nin; ++i)
            gw[i] += g * in[i];
    }
    if (grad_in.empty())
        return;
    std::fill(grad_in.begin(), grad_in.end(), 0.0);
    for (std::size_t o = 0; o < nout; ++o) {
        const double g = grad_out[o];
        const double* wr = weight.data() + o * nin;
        for (std::size_t i = 0; i < nin; ++i)
            grad_in[i] += g * wr[i];
    }
}

void relu_inplace(std::span<double> x)
{
    for (auto& v : x)
        v = std::max(v, 0.0);
}

void relu_backward(std::span<const double> activated, std::span<double> grad)
{
    for (std::size_t i = 0; i < grad.size(); ++i)
        if (activated[i] <= 0.0)
            grad[i] = 0.0;
}

std::vector<double> softmax(std::span<const double> logits, double temperature)
{
    std::vector<double> p(logits.size());
    if (logits.empty())
        return p;
    const double mx = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        p[i] = std::exp((logits[i] - mx) / temperature);
        sum += p[i];
    }
    for (auto& v : p)
        v /= sum;
    return p;
}

} // namespace amao::nn
