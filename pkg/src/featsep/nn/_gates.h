#ifndef FEATSEP_GATES_H
#define FEATSEP_GATES_H

void gru_gates_backward(long R, long H,
                        const double *cache_t, const double *h_prev,
                        const double *dh_out_t, const double *carry_in,
                        double *dpre, double *dxp_t, double *carry_out,
                        double *dbh);

#endif
