/* Fused GRU backward gate math, one time step at a time.
 *
 * All polynomial (the transcendentals live in the forward pass, where
 * numpy's SIMD kernels win); fusing the ~12 elementwise passes of the
 * numpy fallback into one loop is what the compiled backend buys.
 *
 * Layouts: dpre/dxp_t are [R, 3H] blocked reset | update | candidate;
 * cache_t is [R, 4H] blocked r | z | n | recurrent-candidate-preactivation.
 */

#include "_gates.h"

void gru_gates_backward(long R, long H,
                        const double *cache_t, const double *h_prev,
                        const double *dh_out_t, const double *carry_in,
                        double *dpre, double *dxp_t, double *carry_out,
                        double *dbh)
{
    for (long i = 0; i < R; i++) {
        const double *cr = cache_t + i * 4 * H;
        const double *cz = cr + H;
        const double *cn = cr + 2 * H;
        const double *chl = cr + 3 * H;
        const double *hprev = h_prev + i * H;
        const double *dho = dh_out_t + i * H;
        const double *cin = carry_in + i * H;
        double *dpr = dpre + i * 3 * H;
        double *dpz = dpr + H;
        double *dpn = dpr + 2 * H;
        double *dxr = dxp_t + i * 3 * H;
        double *dxz = dxr + H;
        double *dxn = dxr + 2 * H;
        double *cout = carry_out + i * H;
#pragma omp simd
        for (long j = 0; j < H; j++) {
            double r = cr[j], z = cz[j], n = cn[j], hl = chl[j];
            double dh = dho[j] + cin[j];
            double dn_pre = dh * (1.0 - z) * (1.0 - n * n);
            double dz_pre = dh * (hprev[j] - n) * z * (1.0 - z);
            double dhl = dn_pre * r;
            double dr_pre = dn_pre * hl * r * (1.0 - r);
            dpr[j] = dr_pre;
            dpz[j] = dz_pre;
            dpn[j] = dhl;
            dxr[j] = dr_pre;
            dxz[j] = dz_pre;
            dxn[j] = dn_pre;
            dbh[j] += dr_pre;
            dbh[H + j] += dz_pre;
            dbh[2 * H + j] += dhl;
            cout[j] = dh * z;
        }
    }
}
