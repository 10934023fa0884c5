#include <math.h>
#include <stdio.h>
#include "hqnn.h"

#define CHECK(call)                                                        \
    do {                                                                   \
        HqnnStatus s_ = (call);                                            \
        if (s_ != HQNN_STATUS_OK) {                                        \
            char msg[256];                                                 \
            hqnn_last_error(msg, sizeof msg);                              \
            fprintf(stderr, "%s failed (%d): %s\n", #call, (int)s_, msg);  \
            return 1;                                                      \
        }                                                                  \
    } while (0)

int main(void) {
    HqnnDensityMatrix *rho = NULL;
    CHECK(hqnn_density_new(1, &rho));
    CHECK(hqnn_density_apply_channel(rho, HQNN_NOISE_BIT_FLIP, 0.3, 0));
    double z = 0.0;
    CHECK(hqnn_density_expect_z(rho, 0, &z));
    hqnn_density_free(rho);
    if (fabs(z - 0.4) > 1e-12) {
        fprintf(stderr, "expected <Z> = 0.4, got %.17g\n", z);
        return 1;
    }
    if (hqnn_density_expect_z(NULL, 0, &z) != HQNN_STATUS_NULL_POINTER) {
        return 1;
    }
    printf("ok %.6f\n", z);
    return 0;
}
