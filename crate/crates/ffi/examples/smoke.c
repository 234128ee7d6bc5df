/* Minimal consumer of the C interface: parse a configuration, simulate,
 * and print one curve. */
#include <stdio.h>
#include "ttcm.h"

static const char *CONFIG =
    "{\"input\":{\"terms\":[{\"lambda\":1.0,\"mu\":-0.1},{\"lambda\":2.0,\"mu\":-1.5}]},"
    "\"regions\":[{\"id\":\"a\",\"K1\":0.5,\"k2\":0.4,\"k3\":0.2,\"k4\":0.1}]}";

int main(void) {
    double times[4] = {0.5, 1.0, 5.0, 20.0};
    double ct[4];
    double a1, a2;
    TtcmConfig *cfg = NULL;

    if (ttcm_config_from_json(CONFIG, &cfg) != TTCM_STATUS_OK) {
        fprintf(stderr, "parse: %s\n", ttcm_last_error_message());
        return 1;
    }
    if (ttcm_compute_alphas(0.4, 0.2, 0.1, &a1, &a2) != TTCM_STATUS_OK) {
        return 1;
    }
    if (ttcm_eval_ct(cfg, 0, times, 4, ct) != TTCM_STATUS_OK) {
        fprintf(stderr, "eval: %s\n", ttcm_last_error_message());
        return 1;
    }
    printf("%.17g %.17g\n", a1, a2);
    for (int l = 0; l < 4; l++) {
        printf("%.17g\n", ct[l]);
    }
    if (ttcm_compute_alphas(2.0, 0.0, 2.0, &a1, &a2) != TTCM_STATUS_DEGENERATE_PARAMS) {
        return 2;
    }
    ttcm_config_free(cfg);
    return 0;
}
