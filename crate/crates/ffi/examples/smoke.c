#include <stdio.h>
#include <string.h>
#include "kyc.h"

int main(int argc, char **argv) {
    if (argc < 2) {
        fprintf(stderr, "usage: %s BUNDLE\n", argv[0]);
        return 64;
    }
    if (kyc_abi_version() != KYC_ABI_VERSION) {
        return 1;
    }
    KycService *svc = NULL;
    KycStatus st = kyc_service_open(argv[1], NULL, &svc);
    if (st != KYC_STATUS_OK) {
        fprintf(stderr, "open: %d %s\n", st, kyc_last_error());
        return 2;
    }
    size_t n = kyc_vocab_size(svc);
    uint64_t counts[4096] = {0};
    if (n > 4096) {
        return 3;
    }
    counts[1] = 3;
    counts[2] = 1;
    char *id = NULL;
    st = kyc_register_counts(svc, counts, n, 2, &id);
    if (st != KYC_STATUS_OK) {
        fprintf(stderr, "register: %d %s\n", st, kyc_last_error());
        return 4;
    }
    char *json = NULL;
    st = kyc_predict(svc, id, "pos1 w2", &json);
    if (st != KYC_STATUS_OK) {
        return 5;
    }
    printf("%s\n", json);
    char *dummy = NULL;
    st = kyc_predict(svc, "nobody", "pos1", &dummy);
    if (st != KYC_STATUS_UNREGISTERED_CLIENT || kyc_last_error() == NULL) {
        return 6;
    }
    kyc_string_free(json);
    kyc_string_free(id);
    kyc_service_free(svc);
    return 0;
}
